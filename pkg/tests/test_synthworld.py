from dataclasses import replace

import numpy as np
import pytest

from amde.errors import ConfigError, InvalidArgumentError
from amde.metrics import absrel
from amde.projector import project_all
from amde.synthworld import (
    LEVEL_FACTORS,
    LinearDecoder,
    SceneConfig,
    SyntheticWorld,
    default_encoding,
    generate_sequence,
    linear_decode,
    load_sequence,
    save_sequence,
)
from amde.tensorcore import FeatureMap

# AbsRel of decoding noiseless foundation features on the static scene of the
# `static_cfg` fixture, measured once and frozen: the error left by pooling
# to block means and re-interpolating.
STATIC_POOLING_FLOOR = 0.01785174215506442


def test_level_geometry(small_world, small_seq):
    cfg = small_world.cfg
    fr = small_seq[0]
    for lvl, f in enumerate(LEVEL_FACTORS, start=1):
        h, w = cfg.height // f, cfg.width // f
        assert fr.foundation[lvl - 1].data.shape == (cfg.channels, h, w)
        assert fr.encoder[lvl - 1].data.shape == (cfg.encoder_channels[lvl - 1], h, w)
        assert fr.foundation[lvl - 1].level == lvl
    assert fr.depth.data.shape == (cfg.height, cfg.width)
    assert np.all(fr.depth.data > 0)


def test_static_noiseless_world(static_cfg):
    world = SyntheticWorld(static_cfg)
    seq = world.sequence(6)
    proj = world.projector_params()
    for fr in seq[1:]:
        np.testing.assert_array_equal(fr.depth.data, seq[0].depth.data)
        for a, b in zip(fr.foundation, seq[0].foundation):
            np.testing.assert_array_equal(a.data, b.data)
    for a, b in zip(project_all(seq[0].encoder, proj), seq[0].foundation):
        np.testing.assert_array_equal(a.data, b.data)


def test_same_seed_bit_identical(small_cfg):
    a = generate_sequence(small_cfg, 5)
    b = generate_sequence(small_cfg, 5)
    for fa, fb in zip(a, b):
        assert np.array_equal(fa.depth.data, fb.depth.data)
        for x, y in zip(fa.foundation + fa.encoder, fb.foundation + fb.encoder):
            assert np.array_equal(x.data, y.data)


def test_different_seed_differs(small_cfg):
    a = SyntheticWorld(small_cfg).frame(0)
    b = SyntheticWorld(replace(small_cfg, seed=small_cfg.seed + 1)).frame(0)
    assert not np.array_equal(a.depth.data, b.depth.data)


def test_random_access_matches_sequence(small_world, small_seq):
    fr = small_world.frame(7)
    assert np.array_equal(fr.encoder[2].data, small_seq[7].encoder[2].data)


def test_drift_is_a_shift_in_background():
    cfg = SceneConfig(height=64, width=64, seed=2, drift=(2.0, 0.0), n_objects=2, object_size=(10, 10))
    world = SyntheticWorld(cfg)
    d0, m0 = world.depth(0), world.object_mask(0)
    for t in (1, 5, 13):
        shifted = np.roll(d0, 2 * t, axis=1)
        background = ~world.object_mask(t) & ~np.roll(m0, 2 * t, axis=1)
        assert background.mean() > 0.5
        np.testing.assert_array_equal(world.depth(t)[background], shifted[background])


def test_objects_are_nearer_than_terrain(small_world):
    depth, mask = small_world.depth(0), small_world.object_mask(0)
    assert mask.any()
    assert depth[mask].min() > depth[~mask].max()


def test_decoder_left_inverse(small_world, rng):
    cfg = small_world.cfg
    p = cfg.subcells
    for lvl, (h, w) in enumerate(cfg.sizes, start=1):
        d = rng.normal(size=(p * p, h, w))
        feat = FeatureMap(small_world.encode(d), lvl)
        rec = small_world.decoder.descriptor_map(feat)
        expected = d.reshape(p, p, h, w).transpose(2, 0, 3, 1).reshape(h * p, w * p)
        np.testing.assert_allclose(rec, expected, atol=1e-12)


def test_decoder_linearity(small_world, small_seq):
    feats = small_seq[3].foundation
    twice = [f.with_data(2 * f.data) for f in feats]
    np.testing.assert_allclose(small_world.decoder(twice).data, 2 * small_world.decoder(feats).data, atol=1e-12)


def test_functional_decode_matches(small_world, small_seq):
    cfg = small_world.cfg
    out = linear_decode(small_seq[0].foundation, small_world.encoding,
                        dict(out_size=(cfg.height, cfg.width), subcells=cfg.subcells, level_weights=cfg.level_weights))
    np.testing.assert_array_equal(out.data, small_world.decoder(small_seq[0].foundation).data)


def test_noiseless_decode_pooling_floor(static_cfg):
    world = SyntheticWorld(static_cfg)
    fr = world.frame(0)
    assert absrel(world.decoder(fr.foundation), fr.depth) == pytest.approx(STATIC_POOLING_FLOOR, rel=1e-9)
    noiseless_drift = SyntheticWorld(replace(static_cfg, drift=(0.5, 0.0)))
    for t in (0, 4, 9):
        fr = noiseless_drift.frame(t)
        assert absrel(noiseless_drift.decoder(fr.foundation), fr.depth) <= STATIC_POOLING_FLOOR * 1.05


def test_rank_deficient_encoding():
    e = np.zeros((8, 4))
    e[:, 0] = 1.0
    with pytest.raises(ConfigError):
        LinearDecoder(e, (64, 64), 2)
    with pytest.raises(ConfigError):
        SyntheticWorld(SceneConfig(height=64, width=64, encoding=e))


def test_default_encoding_orthogonal():
    e = default_encoding(8, 4, gain=2.0, seed=3)
    np.testing.assert_allclose(e.T @ e, 4.0 * np.eye(4), atol=1e-12)
    with pytest.raises(ConfigError):
        default_encoding(3, 4)


@pytest.mark.parametrize("kw", [dict(height=48), dict(width=0), dict(sigma_foundation=0.1, sigma_encoder=0.1),
                                dict(sigma_foundation=0.2, sigma_encoder=0.1), dict(channels=0),
                                dict(encoder_channels=(4, 8, 8, 8)), dict(level_weights=(0.5, 0.5, 0.5, 0.5)),
                                dict(terrain_amplitude=1.0), dict(subcells=3)])
def test_config_validation(kw):
    with pytest.raises(InvalidArgumentError):
        SceneConfig(**kw)


def test_sequence_length_validated(small_world):
    with pytest.raises(InvalidArgumentError):
        small_world.sequence(0)


def test_features_linear_in_descriptor(small_world, rng):
    a = rng.uniform(0.5, 1.5, size=(64, 64))
    b = rng.uniform(0.5, 1.5, size=(64, 64))
    fa, _ = small_world.features(4, a)
    fb, _ = small_world.features(4, b)
    fab, _ = small_world.features(4, a + b)
    f0, _ = small_world.features(4, np.zeros((64, 64)))
    for x, y, z, w in zip(fa, fb, fab, f0):
        np.testing.assert_allclose(z.data, x.data + y.data - w.data, atol=1e-12)


def test_foundation_decodes_better_than_encoder():
    fnd, enc = [], []
    for seed in range(20):
        world = SyntheticWorld(SceneConfig(height=64, width=64, seed=seed))
        proj = world.projector_params()
        fr = world.frame(2)
        fnd.append(absrel(world.decoder(fr.foundation), fr.depth))
        enc.append(absrel(world.decoder(project_all(fr.encoder, proj)), fr.depth))
    assert np.mean(fnd) < np.mean(enc)


def test_save_load_roundtrip(tmp_path, small_world):
    frames = small_world.sequence(3)
    save_sequence(tmp_path / "seq", small_world, frames)
    stored = load_sequence(tmp_path / "seq")
    assert len(stored.frames) == 3
    assert stored.manifest["sequence"].getint("frames") == 3
    assert float(stored.manifest["sequence"]["sigma_encoder"]) == small_world.cfg.sigma_encoder
    for a, b in zip(frames, stored.frames):
        np.testing.assert_array_equal(b.depth.data, a.depth.data.astype(np.float32))
        for x, y in zip(a.encoder, b.encoder):
            np.testing.assert_array_equal(y.data, x.data.astype(np.float32))
    proj = small_world.projector_params()
    for w0, w1 in zip(proj.weights, stored.projector.weights):
        np.testing.assert_array_equal(w0, w1)
    np.testing.assert_allclose(stored.decoder.encoding, small_world.encoding, atol=1e-7)

"""Deterministic synthetic scenes standing in for the camera, the foundation
backbone and the lightweight encoder.

Ground truth is an inverse-depth video: a periodic terrain translated by a
constant camera drift, with rectangular foreground objects moving on top.
Both feature streams encode the same average-pooled inverse-depth
descriptor through a fixed matrix ``E``; they differ only in noise level
(and the encoder stream additionally lives in a wider, permuted channel
basis that the reference projector undoes exactly).
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field
from os import PathLike
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvalidArgumentError
from .projector import ProjectorParams
from .tensorcore import DepthMap, FeatureMap, LEVELS, read_array, resize_array, tensor_read, tensor_write, write_array

LEVEL_FACTORS = (4, 8, 16, 32)
FOUNDATION_STREAM, ENCODER_STREAM, DISTRACTOR_STREAM = 0, 1, 2


@dataclass(frozen=True)
class SceneConfig:
    height: int = 128
    width: int = 128
    seed: int = 0
    drift: tuple[float, float] = (0.22, 0.0)  # (x, y) pixels per frame
    n_objects: int = 3
    object_size: tuple[int, int] = (24, 24)  # (h, w) pixels
    object_speed: float = 1.0
    object_offset: float = 0.4  # inverse-depth step of objects over the terrain mean
    terrain_modes: int = 6
    terrain_amplitude: float = 0.3
    sigma_foundation: float = 0.018
    sigma_encoder: float = 0.09
    channels: int = 8
    subcells: int = 2  # descriptor is a subcells x subcells grid of block means
    feature_gain: float = 1.0
    encoder_channels: tuple[int, ...] = (12, 16, 24, 32)
    encoding_seed: int = 0  # the "network" side: E and the encoder basis
    level_weights: tuple[float, ...] = (0.4, 0.3, 0.2, 0.1)
    encoding: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        top = LEVEL_FACTORS[-1]
        if self.height < top or self.width < top or self.height % top or self.width % top:
            raise InvalidArgumentError(f"frame size must be a positive multiple of {top}, got {self.height}x{self.width}")
        if self.subcells < 1 or LEVEL_FACTORS[0] % self.subcells:
            raise InvalidArgumentError(f"subcells must divide {LEVEL_FACTORS[0]}")
        if self.channels < 1:
            raise InvalidArgumentError("channels must be >= 1")
        if min(self.sigma_foundation, self.sigma_encoder) < 0:
            raise InvalidArgumentError("noise levels must be >= 0")
        if not (self.sigma_foundation < self.sigma_encoder or self.sigma_foundation == self.sigma_encoder == 0):
            raise InvalidArgumentError("foundation noise must be strictly below encoder noise "
                                       "(both zero is allowed for a noiseless world)")
        if len(self.encoder_channels) != 4 or any(c < self.channels for c in self.encoder_channels):
            raise InvalidArgumentError(f"need 4 encoder channel counts, each >= {self.channels}")
        if len(self.level_weights) != 4 or abs(sum(self.level_weights) - 1.0) > 1e-12 or min(self.level_weights) < 0:
            raise InvalidArgumentError("level_weights must be 4 non-negative values summing to 1")
        if not 0 <= self.terrain_amplitude < 1:
            raise InvalidArgumentError("terrain_amplitude must be in [0, 1)")
        if self.n_objects < 0:
            raise InvalidArgumentError("n_objects must be >= 0")
        oh, ow = self.object_size
        if self.n_objects and not (0 < oh <= self.height and 0 < ow <= self.width):
            raise InvalidArgumentError("object_size must fit inside the frame")

    @property
    def descriptor_dim(self) -> int:
        return self.subcells ** 2

    @property
    def sizes(self) -> tuple[tuple[int, int], ...]:
        return tuple((self.height // f, self.width // f) for f in LEVEL_FACTORS)


@dataclass(frozen=True, eq=False)
class FrameBundle:
    t: int
    depth: DepthMap
    foundation: tuple[FeatureMap, ...]
    encoder: tuple[FeatureMap, ...]


def _noise(seed: int, stream: int, t: int, level: int, shape) -> np.ndarray:
    # counter-based: any (seed, stream, t, level) is reproducible on its own
    key = np.random.SeedSequence([seed, stream, t, level])
    return np.random.Generator(np.random.Philox(key)).standard_normal(shape)


def default_encoding(channels: int, descriptor_dim: int, gain: float = 1.0, seed: int = 0) -> np.ndarray:
    """channels x descriptor_dim matrix with orthogonal columns of norm ``gain``."""
    if channels < descriptor_dim:
        raise ConfigError(f"need channels >= descriptor size ({channels} < {descriptor_dim})")
    rng = np.random.default_rng([seed, 7])
    q, _ = np.linalg.qr(rng.standard_normal((channels, descriptor_dim)))
    return gain * q


class LinearDecoder:
    """Left-inverse readout from fused features back to an inverse-depth map."""

    def __init__(self, encoding: np.ndarray, out_size: tuple[int, int], subcells: int,
                 level_weights: Sequence[float] = (0.4, 0.3, 0.2, 0.1)):
        encoding = np.asarray(encoding, dtype=np.float64)
        if encoding.ndim != 2 or encoding.shape[1] != subcells ** 2:
            raise ConfigError(f"encoding must be C x {subcells ** 2}, got {encoding.shape}")
        if np.linalg.matrix_rank(encoding) < encoding.shape[1]:
            raise ConfigError("encoding matrix is rank-deficient; no left inverse")
        self.encoding = encoding
        self.left_inverse = np.linalg.pinv(encoding)
        self.out_size = tuple(out_size)
        self.subcells = subcells
        self.level_weights = tuple(float(w) for w in level_weights)

    def descriptor_map(self, feat: FeatureMap) -> np.ndarray:
        """Recovered block-mean map of one level, (h*p) x (w*p)."""
        p = self.subcells
        desc = np.tensordot(self.left_inverse, feat.data, axes=(1, 0))
        h, w = feat.size
        return desc.reshape(p, p, h, w).transpose(2, 0, 3, 1).reshape(h * p, w * p)

    def __call__(self, fused: Sequence[FeatureMap]) -> DepthMap:
        out = np.zeros(self.out_size)
        for wgt, feat in zip(self.level_weights, fused):
            out += wgt * resize_array(self.descriptor_map(feat)[None], *self.out_size)[0]
        return DepthMap(out)


def linear_decode(fused: Sequence[FeatureMap], encoding: np.ndarray, readout: dict) -> DepthMap:
    """Functional form; ``readout`` carries out_size, subcells and level_weights."""
    return LinearDecoder(encoding, **readout)(fused)


class SyntheticWorld:
    """Random-access generator for one scene configuration."""

    def __init__(self, cfg: SceneConfig):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 1])
        m = cfg.terrain_modes
        self._kx = rng.integers(1, 5, size=m)
        self._ky = rng.integers(-4, 5, size=m)
        self._phase = rng.uniform(0, 2 * np.pi, size=m)
        amps = rng.uniform(0.5, 1.0, size=m)
        self._amp = cfg.terrain_amplitude * amps / amps.sum() if m else amps

        n = cfg.n_objects
        self._obj_pos = rng.uniform(0, 1, size=(n, 2)) * [cfg.width, cfg.height]
        angle = rng.uniform(0, 2 * np.pi, size=n)
        self._obj_vel = cfg.object_speed * np.column_stack([np.cos(angle), np.sin(angle)])
        self._obj_val = 1.0 + cfg.object_offset * (1.0 + 0.5 * rng.uniform(0, 1, size=n))

        if cfg.encoding is not None:
            self.encoding = np.asarray(cfg.encoding, dtype=np.float64)
        else:
            self.encoding = default_encoding(cfg.channels, cfg.descriptor_dim, cfg.feature_gain, cfg.encoding_seed)
        if self.encoding.shape != (cfg.channels, cfg.descriptor_dim):
            raise ConfigError(f"encoding must be {cfg.channels} x {cfg.descriptor_dim}, got {self.encoding.shape}")
        self.decoder = LinearDecoder(self.encoding, (cfg.height, cfg.width), cfg.subcells, cfg.level_weights)

        # encoder basis: signed embedding of the C memory channels into C_enc
        erng = np.random.default_rng([cfg.encoding_seed, 11])
        self._enc_rows, self._enc_sign = [], []
        for c_enc in cfg.encoder_channels:
            self._enc_rows.append(erng.permutation(c_enc)[:cfg.channels])
            self._enc_sign.append(erng.choice([-1.0, 1.0], size=cfg.channels))

    @property
    def sizes(self):
        return self.cfg.sizes

    def projector_params(self) -> ProjectorParams:
        """Projector that maps encoder features exactly back into memory space."""
        cfg = self.cfg
        ws = []
        for c_enc, rows, sign in zip(cfg.encoder_channels, self._enc_rows, self._enc_sign):
            w = np.zeros((cfg.channels, c_enc))
            w[np.arange(cfg.channels), rows] = sign
            ws.append(w)
        zero = np.zeros(cfg.channels)
        return ProjectorParams(tuple(ws), (zero,) * 4, cfg.sizes)

    # ---- scene -------------------------------------------------------------------

    def terrain(self, t: int) -> np.ndarray:
        cfg = self.cfg
        vx, vy = cfg.drift
        u = np.mod(np.arange(cfg.width) - vx * t, cfg.width)
        v = np.mod(np.arange(cfg.height) - vy * t, cfg.height)
        out = np.ones((cfg.height, cfg.width))
        for kx, ky, ph, a in zip(self._kx, self._ky, self._phase, self._amp):
            out += a * np.cos(2 * np.pi * (kx * u[None, :] / cfg.width + ky * v[:, None] / cfg.height) + ph)
        return out

    def _object_masks(self, t: int) -> list[np.ndarray]:
        cfg = self.cfg
        oh, ow = cfg.object_size
        xc = np.arange(cfg.width) + 0.5
        yc = np.arange(cfg.height) + 0.5
        masks = []
        for pos, vel in zip(self._obj_pos, self._obj_vel):
            px = pos[0] + (vel[0] + cfg.drift[0]) * t
            py = pos[1] + (vel[1] + cfg.drift[1]) * t
            in_x = np.mod(xc - px, cfg.width) < ow
            in_y = np.mod(yc - py, cfg.height) < oh
            masks.append(in_y[:, None] & in_x[None, :])
        return masks

    def object_mask(self, t: int) -> np.ndarray:
        out = np.zeros((self.cfg.height, self.cfg.width), dtype=bool)
        for m in self._object_masks(t):
            out |= m
        return out

    def depth(self, t: int) -> np.ndarray:
        out = self.terrain(t)
        masks = self._object_masks(t)
        # nearer objects (larger inverse depth) paint last
        for i in np.argsort(self._obj_val, kind="stable"):
            out[masks[i]] = self._obj_val[i]
        return out

    # ---- features ----------------------------------------------------------------

    def descriptor(self, depth: np.ndarray, level: int) -> np.ndarray:
        """Block-mean descriptor at one level, D x h x w."""
        p = self.cfg.subcells
        f = LEVEL_FACTORS[level - 1]
        q = f // p
        hh, ww = depth.shape[0] // q, depth.shape[1] // q
        pooled = depth.reshape(hh, q, ww, q).mean(axis=(1, 3))
        h, w = hh // p, ww // p
        return pooled.reshape(h, p, w, p).transpose(1, 3, 0, 2).reshape(p * p, h, w)

    def encode(self, desc: np.ndarray) -> np.ndarray:
        return np.tensordot(self.encoding, desc, axes=(1, 0))

    def _noisy(self, clean: np.ndarray, sigma: float, stream: int, t: int, level: int) -> np.ndarray:
        if sigma == 0:
            return clean
        return clean + sigma * _noise(self.cfg.seed, stream, t, level, clean.shape)

    def features(self, t: int, depth: np.ndarray | None = None):
        cfg = self.cfg
        depth = self.depth(t) if depth is None else depth
        foundation, encoder = [], []
        for lvl in LEVELS:
            clean = self.encode(self.descriptor(depth, lvl))
            foundation.append(FeatureMap(self._noisy(clean, cfg.sigma_foundation, FOUNDATION_STREAM, t, lvl), lvl))
            core = self._noisy(clean, cfg.sigma_encoder, ENCODER_STREAM, t, lvl)
            c_enc = cfg.encoder_channels[lvl - 1]
            enc = self._noisy(np.zeros((c_enc,) + core.shape[1:]), cfg.sigma_encoder, DISTRACTOR_STREAM, t, lvl)
            enc[self._enc_rows[lvl - 1]] = self._enc_sign[lvl - 1][:, None, None] * core
            encoder.append(FeatureMap(enc, lvl))
        return tuple(foundation), tuple(encoder)

    def frame(self, t: int) -> FrameBundle:
        depth = self.depth(t)
        foundation, encoder = self.features(t, depth)
        return FrameBundle(t, DepthMap(depth), foundation, encoder)

    def sequence(self, length: int) -> list[FrameBundle]:
        if length < 1:
            raise InvalidArgumentError("sequence length must be >= 1")
        return [self.frame(t) for t in range(length)]


def generate_sequence(cfg: SceneConfig, length: int) -> list[FrameBundle]:
    return SyntheticWorld(cfg).sequence(length)


# ---- disk export ------------------------------------------------------------------

def save_sequence(directory: str | PathLike, world: SyntheticWorld, frames: Sequence[FrameBundle]) -> Path:
    """Write frames as tensor files plus ``manifest.ini``, encoding and projector."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = world.cfg
    man = configparser.ConfigParser()
    scene = {k: v for k, v in asdict(cfg).items() if k != "encoding"}
    man["sequence"] = {
        "frames": str(len(frames)),
        "height": str(cfg.height),
        "width": str(cfg.width),
        "seed": str(cfg.seed),
        "sigma_foundation": repr(cfg.sigma_foundation),
        "sigma_encoder": repr(cfg.sigma_encoder),
        "channels": str(cfg.channels),
        "subcells": str(cfg.subcells),
        "level_sizes": " ".join(f"{h}x{w}" for h, w in cfg.sizes),
        "level_weights": " ".join(repr(w) for w in cfg.level_weights),
    }
    man["scene"] = {k: " ".join(map(str, v)) if isinstance(v, tuple) else str(v) for k, v in scene.items()}
    with open(directory / "manifest.ini", "w") as fh:
        man.write(fh)
    write_array(directory / "encoding.amde", world.encoding)
    world.projector_params().save(directory)
    for fr in frames:
        fdir = directory / f"frame_{fr.t:05d}"
        fdir.mkdir(exist_ok=True)
        tensor_write(fdir / "depth.amde", fr.depth)
        for lvl in LEVELS:
            tensor_write(fdir / f"foundation_l{lvl}.amde", fr.foundation[lvl - 1])
            tensor_write(fdir / f"encoder_l{lvl}.amde", fr.encoder[lvl - 1])
    return directory


@dataclass
class StoredSequence:
    frames: list[FrameBundle]
    encoding: np.ndarray
    projector: ProjectorParams
    decoder: LinearDecoder
    manifest: configparser.ConfigParser


def load_sequence(directory: str | PathLike) -> StoredSequence:
    directory = Path(directory)
    man = configparser.ConfigParser()
    if not man.read(directory / "manifest.ini"):
        raise FileNotFoundError(directory / "manifest.ini")
    sec = man["sequence"]
    n = sec.getint("frames")
    sizes = [tuple(int(v) for v in s.split("x")) for s in sec["level_sizes"].split()]
    weights = [float(w) for w in sec["level_weights"].split()]
    encoding = read_array(directory / "encoding.amde", ndim=2).astype(np.float64)
    projector = ProjectorParams.load(directory, sizes)
    decoder = LinearDecoder(encoding, (sec.getint("height"), sec.getint("width")), sec.getint("subcells"), weights)
    frames = []
    for t in range(n):
        fdir = directory / f"frame_{t:05d}"
        depth = tensor_read(fdir / "depth.amde", DepthMap)
        fnd = tuple(tensor_read(fdir / f"foundation_l{l}.amde", FeatureMap, l) for l in LEVELS)
        enc = tuple(tensor_read(fdir / f"encoder_l{l}.amde", FeatureMap, l) for l in LEVELS)
        frames.append(FrameBundle(t, depth, fnd, enc))
    return StoredSequence(frames, encoding, projector, decoder, man)

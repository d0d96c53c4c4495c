import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amde.errors import DegenerateInputError, InvalidArgumentError
from amde.losses import LossConfig, grad_loss, mem_loss, normalize, ssi_loss, total_loss
from amde.modulator import constant_field
from amde.tensorcore import DepthMap

from oracles import central_gradient, grad_loss_scalar, min_kink_distance, rel_error


def std(x):
    return (x - x.mean()) / x.std()


# ---- ssi -----------------------------------------------------------------------------

def test_ssi_zero_at_equal(rng):
    g = rng.normal(size=(8, 8))
    value, grad = ssi_loss(g, g)
    assert value == 0.0
    assert np.all(grad == 0)


@pytest.mark.parametrize("a,b", [(0.5, -3), (2, 0), (10, 7)])
def test_ssi_affine_of_target_is_zero(rng, a, b):
    g = rng.normal(size=(8, 8))
    assert ssi_loss(a * g + b, g)[0] < 1e-24


def test_ssi_matches_definition(rng):
    p, g = rng.normal(size=(2, 6, 7))
    assert abs(ssi_loss(p, g)[0] - np.mean((std(p) - std(g)) ** 2)) < 1e-14


def test_ssi_symmetric(rng):
    p, g = rng.normal(size=(2, 8, 8))
    assert abs(ssi_loss(p, g)[0] - ssi_loss(g, p)[0]) < 1e-14


def test_ssi_fd_gradient(rng):
    p, g = rng.normal(size=(2, 8, 8))
    _, grad = ssi_loss(p, g)
    fd = central_gradient(lambda x: ssi_loss(x, g)[0], p)
    assert rel_error(grad, fd) < 1e-4


def test_ssi_mask_excludes_pixels(rng):
    p, g = rng.normal(size=(2, 6, 6))
    mask = rng.uniform(size=(6, 6)) > 0.3
    value, grad = ssi_loss(DepthMap(p, mask), DepthMap(g, mask))
    assert abs(value - np.mean((std(p[mask]) - std(g[mask])) ** 2)) < 1e-14
    assert np.all(grad[~mask] == 0)
    p2 = p.copy()
    p2[~mask] = 1e6
    assert ssi_loss(DepthMap(p2, mask), DepthMap(g, mask))[0] == value


def test_ssi_degenerate(rng):
    with pytest.raises(DegenerateInputError):
        ssi_loss(np.ones((4, 4)), rng.normal(size=(4, 4)))
    with pytest.raises(DegenerateInputError):
        ssi_loss(rng.normal(size=(4, 4)), np.full((4, 4), 3.0))
    with pytest.raises(InvalidArgumentError):
        normalize(np.ones((2, 2)), np.eye(2, dtype=bool) & False)


# ---- multi-scale gradient --------------------------------------------------------------

def test_grad_loss_zero_at_equal(rng):
    g = rng.normal(size=(16, 16))
    value, grad = grad_loss(g, g)
    assert value == 0.0 and np.all(grad == 0)


def test_grad_loss_step_hand_value():
    # step of height h between columns 7 and 8; only the x-terms see it
    h = 0.75
    p = np.zeros((16, 16))
    p[:, 8:] = h
    value, _ = grad_loss(p, np.zeros((16, 16)))
    # per scale: one step column out of (W-1) anchor columns, weighted 1/s^2;
    # the 2x2 pooling keeps the step sharp because column 8 is even
    s1 = h * 15 / (15 * 15)
    s2 = h * 7 / (7 * 7) / 4
    s3 = h * 3 / (3 * 3) / 9
    s4 = h * 1 / (1 * 1) / 16
    expected = s1 + s2 + s3 + s4
    assert abs(expected - h * (1 / 15 + 1 / 28 + 1 / 27 + 1 / 16)) < 1e-15
    assert abs(value - expected) < 1e-14
    assert abs(value - grad_loss_scalar(p, np.zeros((16, 16)))) < 1e-14


def test_grad_loss_matches_scalar_oracle(rng):
    for _ in range(5):
        p, g = rng.normal(size=(2, 20, 18))
        assert abs(grad_loss(p, g)[0] - grad_loss_scalar(p, g)) < 1e-12


def test_grad_loss_fd_gradient(rng):
    p, g = rng.normal(size=(2, 16, 16))
    assert min_kink_distance(p, g) > 1e-4
    _, grad = grad_loss(p, g)
    fd = central_gradient(lambda x: grad_loss(x, g)[0], p)
    assert rel_error(grad, fd) < 1e-4


def test_grad_loss_too_small():
    with pytest.raises(InvalidArgumentError, match="minimum size is 16x16"):
        grad_loss(np.ones((15, 16)), np.ones((15, 16)))
    grad_loss(np.arange(16.0)[:, None] * np.ones((16, 16)), np.zeros((16, 16)))


def test_grad_loss_fewer_scales(rng):
    p, g = rng.normal(size=(2, 4, 4))
    assert abs(grad_loss(p, g, scales=2)[0] - grad_loss_scalar(p, g, scales=2)) < 1e-14


def test_grad_loss_mask_drops_pairs(rng):
    p, g = rng.normal(size=(2, 16, 16))
    mask = np.ones((16, 16), dtype=bool)
    mask[3, 5] = False
    _, grad = grad_loss(DepthMap(p, mask), DepthMap(g, mask))
    assert grad[3, 5] == 0
    p2 = p.copy()
    p2[3, 5] = 100.0
    assert grad_loss(DepthMap(p2, mask), DepthMap(g, mask))[0] == grad_loss(DepthMap(p, mask), DepthMap(g, mask))[0]


# ---- memory hinge ------------------------------------------------------------------------

@pytest.mark.parametrize("mean", [0.4, 0.5, 0.9])
def test_mem_inactive(mean):
    value, grad = mem_loss(np.full((4, 4), mean), 0.4)
    assert value == 0.0 and np.all(grad == 0)


def test_mem_active():
    value, grad = mem_loss(np.full((4, 4), 0.3), 0.4)
    assert value == 0.4 - 0.3
    assert abs(value - 0.1) < 1e-15
    assert np.all(grad == -1 / 16)


def test_mem_accepts_field():
    assert mem_loss(constant_field(0.2, ((4, 4), (2, 2), (1, 1), (1, 1))))[0] == 0.4 - 0.2


@settings(max_examples=100, deadline=None)
@given(st.floats(0.001, 0.999), st.floats(0.0, 0.5))
def test_mem_nonincreasing(m, dm):
    lo = mem_loss(np.full((2, 2), m))[0]
    hi = mem_loss(np.full((2, 2), min(m + dm, 0.999)))[0]
    assert hi <= lo


def test_mem_fd_gradient(rng):
    t = rng.uniform(0.05, 0.6, size=(6, 6))
    t *= 0.3 / t.mean()
    _, grad = mem_loss(t)
    fd = central_gradient(lambda x: mem_loss(x)[0], t)
    assert rel_error(grad, fd) < 1e-4


# ---- total --------------------------------------------------------------------------------

def test_total_zero(rng):
    g = rng.normal(size=(16, 16))
    value, gp, gt = total_loss(g, g, np.full((4, 4), 0.5))
    assert value == 0 and np.all(gp == 0) and np.all(gt == 0)


def test_total_only_mem_term(rng):
    g = rng.normal(size=(16, 16))
    value, _, gt = total_loss(g, g, np.full((4, 4), 0.2))
    assert abs(value - 0.1 * 0.2) < 1e-15
    assert np.all(gt == 0.1 * -1 / 16)


def test_total_recomposition(rng):
    p, g = rng.normal(size=(2, 16, 16))
    t = rng.uniform(0.1, 0.5, size=(4, 4))
    cfg = LossConfig()
    value, gp, gt = total_loss(p, g, t, cfg)
    ssi, _ = ssi_loss(p, g)
    gl, _ = grad_loss(std(p), std(g))
    ml, mg = mem_loss(t)
    assert abs(value - (ssi + 0.5 * gl + 0.1 * ml)) < 1e-12
    np.testing.assert_array_equal(gt, 0.1 * mg)


def test_total_fd_gradient(rng):
    p, g = rng.normal(size=(2, 16, 16))
    assert min_kink_distance(std(p), std(g)) > 1e-4
    t = rng.uniform(0.1, 0.5, size=(4, 4))
    _, gp, gt = total_loss(p, g, t)
    assert rel_error(gp, central_gradient(lambda x: total_loss(x, g, t)[0], p)) < 1e-4
    assert rel_error(gt, central_gradient(lambda x: total_loss(p, g, x)[0], t)) < 1e-4


def test_config_validation():
    for bad in (dict(tau=0.0), dict(tau=1.0), dict(ssi_weight=-1), dict(eps=0), dict(scales=0)):
        with pytest.raises(InvalidArgumentError):
            LossConfig(**bad)

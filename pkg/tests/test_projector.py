import numpy as np
import pytest

from amde.errors import InvalidArgumentError
from amde.projector import ProjectorParams, project, project_all
from amde.tensorcore import FeatureMap

from oracles import linear_scalar, resize_scalar

SIZES = ((8, 8), (4, 4), (2, 2), (1, 1))


def random_params(rng, c_mem=3, c_in=(4, 5, 6, 7), sizes=SIZES):
    ws = tuple(rng.normal(size=(c_mem, c)) for c in c_in)
    bs = tuple(rng.normal(size=c_mem) for _ in c_in)
    return ProjectorParams(ws, bs, sizes)


def test_identity_at_target_size(rng):
    params = ProjectorParams.identity(4, SIZES)
    obs = FeatureMap(rng.normal(size=(4, 8, 8)), 1)
    np.testing.assert_array_equal(project(1, obs, params).data, obs.data)


def test_constant_obs_gives_constant_output(rng):
    params = random_params(rng)
    c = rng.normal(size=5)
    obs = FeatureMap(np.broadcast_to(c[:, None, None], (5, 3, 7)).copy(), 2)
    out = project(2, obs, params).data
    expected = params.weights[1] @ c + params.biases[1]
    assert out.shape == (3, 4, 4)
    np.testing.assert_allclose(out, np.broadcast_to(expected[:, None, None], out.shape), atol=1e-12)


def test_composition_oracle(rng):
    params = random_params(rng)
    src = rng.normal(size=(4, 5, 3))
    expected = resize_scalar(linear_scalar(src, params.weights[0], params.biases[0]), 8, 8)
    np.testing.assert_allclose(project(1, FeatureMap(src, 1), params).data, expected, atol=1e-12)


def test_linear_for_zero_bias(rng):
    params = ProjectorParams(tuple(rng.normal(size=(3, 6)) for _ in range(4)), (np.zeros(3),) * 4, SIZES)
    x, y = rng.normal(size=(2, 6, 5, 5))
    lhs = project(3, FeatureMap(2 * x - y, 3), params).data
    rhs = 2 * project(3, FeatureMap(x, 3), params).data - project(3, FeatureMap(y, 3), params).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@pytest.mark.parametrize("in_size", [(1, 1), (3, 9), (16, 16)])
def test_output_size_is_configured_size(rng, in_size):
    params = random_params(rng)
    out = project_all([FeatureMap(rng.normal(size=(c,) + in_size), lvl)
                       for lvl, c in enumerate((4, 5, 6, 7), start=1)], params)
    assert [o.size for o in out] == list(SIZES)
    assert [o.level for o in out] == [1, 2, 3, 4]


def test_errors(rng):
    params = random_params(rng)
    with pytest.raises(InvalidArgumentError):
        project(5, FeatureMap(np.ones((4, 2, 2)), 1), params)
    with pytest.raises(InvalidArgumentError):
        project(1, FeatureMap(np.ones((5, 2, 2)), 1), params)
    with pytest.raises(InvalidArgumentError):
        ProjectorParams(params.weights[:3], params.biases[:3], SIZES[:3])
    with pytest.raises(InvalidArgumentError):
        ProjectorParams((np.ones((3, 4)), np.ones((2, 4)), np.ones((3, 4)), np.ones((3, 4))),
                        (np.zeros(3), np.zeros(2), np.zeros(3), np.zeros(3)), SIZES)


def test_save_load_roundtrip(tmp_path, rng):
    params = random_params(rng)
    params.save(tmp_path)
    back = ProjectorParams.load(tmp_path, SIZES)
    for a, b in zip(params.weights + params.biases, back.weights + back.biases):
        np.testing.assert_array_equal(b, a.astype(np.float32))

import numpy as np
import pytest

from amde.synthworld import SceneConfig, SyntheticWorld


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_cfg():
    return SceneConfig(height=64, width=64, seed=3)


@pytest.fixture(scope="session")
def small_world(small_cfg):
    return SyntheticWorld(small_cfg)


@pytest.fixture(scope="session")
def small_seq(small_world):
    return small_world.sequence(24)


@pytest.fixture(scope="session")
def static_cfg():
    return SceneConfig(height=64, width=64, seed=5, drift=(0.0, 0.0), n_objects=0,
                       sigma_foundation=0.0, sigma_encoder=0.0)


def pytest_terminal_summary(terminalreporter):
    from verdicts import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)

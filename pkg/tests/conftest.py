import numpy as np
import pytest

from mmwsparse.geometry import SystemGeometry, desk_geometry


@pytest.fixture(scope="session")
def small_geom():
    """16 x 16 aperture, 8 range slices: the size used by the operator oracles."""
    return SystemGeometry(n_vertical=16, n_horizontal=16, n_range=8)


@pytest.fixture(scope="session")
def desk_geom():
    return desk_geometry()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def crandn(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

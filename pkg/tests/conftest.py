import numpy as np
import pytest

from wcalc.fourier import build_grid
from wcalc.measures import ParticleMeasure
from wcalc.rng import stream


@pytest.fixture(scope="session")
def grid1():
    return build_grid(1, level=4)


@pytest.fixture(scope="session")
def grid2():
    return build_grid(2, level=3)


@pytest.fixture
def make_measure():
    """Factory for seeded random clouds with strictly positive weights."""

    def build(seed, n, dim, scale=1.0, uniform=False):
        gen = stream(seed, 777)
        pts = scale * gen.standard_normal((n, dim))
        if uniform:
            return ParticleMeasure.from_points(pts)
        w = gen.random(n) + 0.1
        return ParticleMeasure(pts, w / w.sum())

    return build


def assert_close(a, b, tol, label=""):
    gap = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
    assert gap <= tol, f"{label} deviation {gap:.3e} > {tol:.1e}"

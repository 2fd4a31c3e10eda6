import numpy as np
import pytest

from hsipost.core import WavelengthGrid, camera_srf


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid31():
    return WavelengthGrid.default()


@pytest.fixture(scope="session")
def cam(grid31):
    return camera_srf(grid31)


def random_srf(rng, k, c=3):
    return rng.uniform(0.0, 1.0, (k, c))


def smooth_spectrum(rng, lam, peak=1.0):
    s = np.zeros_like(lam, dtype=float)
    for _ in range(3):
        s += rng.uniform(0, 1) * np.exp(-0.5 * ((lam - rng.uniform(400, 700)) / rng.uniform(30, 120)) ** 2)
    return s / s.max() * peak

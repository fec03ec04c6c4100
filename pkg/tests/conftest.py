import numpy as np
import pytest

from deltafk.delta_semigroup import DeltaPotential
from deltafk.levy_models import LevyModel


@pytest.fixture(scope="session")
def brownian():
    return LevyModel.brownian(1.0)


@pytest.fixture(scope="session")
def stable15():
    return LevyModel.stable(1.5, 1.0)


@pytest.fixture(scope="session")
def mixed():
    return LevyModel.mixed(0.5, 1.5, 0.5)


@pytest.fixture(scope="session")
def bpot(brownian):
    return DeltaPotential.solve(brownian, 1.0, 0.0)


@pytest.fixture(scope="session")
def spot(stable15):
    return DeltaPotential.solve(stable15, 1.0, 0.0)


def bump(x, width=3.0):
    """Smooth bump supported on ``|x| < width``."""
    u = np.asarray(x, dtype=float) / width
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out

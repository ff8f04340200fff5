import numpy as np
import pytest

from crystalstat import build_nn_kernel, dispersion_grid


@pytest.fixture(scope="session")
def nn1():
    """Nearest-neighbour chain, one component, unit mass."""
    return build_nn_kernel(1, 1, 1.0)


@pytest.fixture(scope="session")
def grid64(nn1):
    return dispersion_grid(nn1, 64)


@pytest.fixture(scope="session")
def grid256(nn1):
    return dispersion_grid(nn1, 256)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260822)

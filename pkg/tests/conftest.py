import numpy as np
import pytest

from sourcefilter import spectral
from sourcefilter.model import reference_config


@pytest.fixture(scope="session")
def basis():
    return spectral.build_basis(1.0, 2.0, 200)


@pytest.fixture(scope="session")
def small_basis():
    return spectral.build_basis(1.0, 2.0, 1)


@pytest.fixture(scope="session")
def cfg():
    return reference_config(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

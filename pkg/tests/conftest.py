import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nncns.constitutive import PressureLaw, ViscosityModel
from nncns.fields import Grid

settings.register_profile(
    "nncns", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("nncns")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid16():
    return Grid(2, 16)


@pytest.fixture(scope="session")
def grid32():
    return Grid(2, 32)


@pytest.fixture(scope="session")
def grid64():
    return Grid(2, 64)


@pytest.fixture(scope="session")
def newtonian():
    return ViscosityModel.newtonian(1.0, 1.0)


@pytest.fixture(scope="session")
def power_law():
    return ViscosityModel.power_law(1.0, 1.8, 1.0)


@pytest.fixture(scope="session")
def pressure():
    return PressureLaw(1.0, 1.4)


def random_symmetric(rng, d, scale=1.0, size=()):
    A = rng.normal(scale=scale, size=(d, d) + tuple(size))
    return 0.5 * (A + np.swapaxes(A, 0, 1))

import numpy as np
import pytest
from hypothesis import settings

from tfelab.core import SmoothBump, make_grid, sample_initial_data
from tfelab.interface_ode import find_periodic_orbit

settings.register_profile("tfelab", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("tfelab")


@pytest.fixture(scope="session")
def orbit_n1():
    orb = find_periodic_orbit(1.0)
    assert orb.converged
    return orb


@pytest.fixture
def bump_field():
    grid = make_grid(-10.0, 10.0, 200)
    return sample_initial_data(SmoothBump(0.0, 2.0, 1.0), grid)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

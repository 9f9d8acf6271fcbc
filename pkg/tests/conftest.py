import numpy as np
import pytest

from dualarrays.core import LatticeSpec, PhysicalParams, build_dual_array, build_single_array
from dualarrays.beams import GaussianBeam


@pytest.fixture(scope="session")
def params():
    return PhysicalParams()


@pytest.fixture(scope="session")
def beam15():
    return GaussianBeam(waist=1.5)


@pytest.fixture(scope="session")
def small_dual():
    # 2x2 layers, flat, the smallest dual geometry with all coupling kinds
    return build_dual_array(LatticeSpec(nx=2, ny=2, a=0.6, L=1.0))


@pytest.fixture(scope="session")
def single_3x3():
    return build_single_array(3, 3, 0.6)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)

import numpy as np
import pytest

from entrylab import _kernels
from entrylab.atmos import ExponentialModel, GasModel
from entrylab.dynamics import PlanetModel, VehicleParams
from entrylab.sim import Mission


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # pay the JIT compilation once (disk-cached afterwards)
    _kernels.warm_up()


@pytest.fixture(scope="session")
def planet():
    return PlanetModel()


@pytest.fixture(scope="session")
def vehicle():
    return VehicleParams()


@pytest.fixture(scope="session")
def gas():
    return GasModel()


@pytest.fixture(scope="session")
def exp_model():
    return ExponentialModel()


@pytest.fixture(scope="session")
def mission():
    return Mission()


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)

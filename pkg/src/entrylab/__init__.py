"""Desk-scale atmospheric-entry guidance laboratory.

Predictor-corrector bank-angle guidance over a stochastic surrogate Mars
atmosphere, with interchangeable density estimators (exponential law,
fading-memory-filtered exponential, recurrent-network profile prediction),
a from-scratch sequence-learning stack, and Monte Carlo campaign tooling.
"""

__version__ = "0.1.0"

from .atmos import (  # noqa: F401
    AtmoSample,
    AtmosphereProfile,
    ExponentialModel,
    GasModel,
    PseudodensityProfile,
)
from .dynamics import CartesianState, PlanetModel, SphericalState, VehicleParams  # noqa: F401
from .estimators import Measurement, NoiseSpec  # noqa: F401
from .fnpeg import GuidanceConfig, GuidanceTarget  # noqa: F401
from .sim import Mission, TrajectoryResult, simulate_entry  # noqa: F401

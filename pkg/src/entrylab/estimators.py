"""Density estimators consumed by the guidance predictor, plus the onboard
measurement model (feature vectors, stagnation-pressure feature, sensor
noise).

Three concrete estimators are provided: the plain exponential law, the
exponential law augmented with first-order fading-memory filtering of the
sensed/expected lift and drag ratios, and a recurrent-network estimator that
converts measurement sequences into pseudodensity profiles. A truth-profile
estimator supports perfect-knowledge feasibility checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels, atmos
from .atmos import (
    AtmosphereProfile,
    ExponentialModel,
    GasModel,
    PSEUDO_GRID_KM,
    PseudodensityProfile,
)
from .dynamics import PlanetModel, SphericalState

FEATURE_NAMES = ("r", "theta", "phi", "v", "gamma", "psi",
                 "a_x", "a_y", "a_z", "log10_p02")
N_FEATURES = len(FEATURE_NAMES)

# below this freestream Mach number the normal-shock relation is not applied
SUPERSONIC_MACH_CUTOFF = 1.2


@dataclass(frozen=True)
class DensitySpec:
    """Compiled-kernel density descriptor: exponential params or a log-density
    grid."""

    mode: int
    p0: float = 0.0
    p1: float = 1.0
    grid_h: np.ndarray = _kernels.EMPTY_GRID
    grid_logr: np.ndarray = _kernels.EMPTY_GRID


def post_shock_stagnation_pressure(p01: float, mach: float, gamma_gas: float) -> float:
    """Total pressure behind a normal shock given the freestream stagnation
    pressure and Mach number (valid for mach > 1)."""
    if mach <= 1.0:
        raise ValueError("normal-shock relation requires supersonic Mach")
    g = gamma_gas
    m2 = mach * mach
    term1 = ((g + 1.0) * m2 / ((g - 1.0) * m2 + 2.0)) ** (g / (g - 1.0))
    term2 = ((g + 1.0) / (2.0 * g * m2 - (g - 1.0))) ** (1.0 / (g - 1.0))
    return p01 * term1 * term2


def stagnation_pressure_feature(velocity: float, static_pressure: float,
                                gas: GasModel) -> float:
    """log10 of the sensed stagnation pressure (Pa).

    Freestream stagnation pressure follows the isentropic relation; above the
    supersonic cutoff the normal-shock factor is applied. The transducer has
    a 1e-12 Pa resolution floor so the feature stays total in near-vacuum.
    """
    a = atmos.speed_of_sound(gas)
    mach = velocity / a
    g = gas.ratio_of_specific_heats
    p01 = static_pressure * (1.0 + 0.5 * (g - 1.0) * mach * mach) ** (g / (g - 1.0))
    if mach > SUPERSONIC_MACH_CUTOFF:
        p02 = post_shock_stagnation_pressure(p01, mach, g)
    else:
        p02 = p01
    return math.log10(max(p02, 1e-12))


@dataclass(frozen=True)
class Measurement:
    """One guidance-cycle measurement: sensed spherical state, sensed
    aerodynamic acceleration vector (planet-fixed), and the stagnation
    pressure feature."""

    time: float
    vector: np.ndarray  # the 10 features in FEATURE_NAMES order

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=float).reshape(N_FEATURES).copy()
        object.__setattr__(self, "vector", vec)
        vec.setflags(write=False)

    @property
    def state(self) -> SphericalState:
        r, theta, phi, v, gamma, psi = self.vector[:6]
        return SphericalState(r, theta, phi, v, gamma, psi)

    @property
    def accel(self) -> np.ndarray:
        return self.vector[6:9]

    @property
    def load(self) -> float:
        return float(np.linalg.norm(self.vector[6:9]))

    @property
    def log10_stag_pressure(self) -> float:
        return float(self.vector[9])


def build_measurement(t: float, state: SphericalState, accel: np.ndarray,
                      log10_p02: float) -> Measurement:
    vec = np.array([state.r, state.theta, state.phi, state.velocity,
                    state.gamma, state.psi, accel[0], accel[1], accel[2],
                    log10_p02])
    return Measurement(t, vec)


@dataclass(frozen=True)
class NoiseSpec:
    """3-sigma sensor noise levels per feature component."""

    r_m: float = 5.0
    angle_deg: float = 8.4e-5  # longitude and latitude
    v_mps: float = 1.0
    fpa_deg: float = 0.01
    heading_deg: float = 0.01
    accel_g: float = 1.0e-7  # per axis, in units of surface gravity
    pressure_frac: float = 0.01  # multiplicative on the stagnation pressure

    def __post_init__(self):
        for name in ("r_m", "angle_deg", "v_mps", "fpa_deg", "heading_deg",
                     "accel_g", "pressure_frac"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")

    def sigmas(self, g0: float) -> np.ndarray:
        """Per-component additive 1-sigma levels (pressure handled apart)."""
        return np.array([
            self.r_m / 3.0,
            math.radians(self.angle_deg) / 3.0,
            math.radians(self.angle_deg) / 3.0,
            self.v_mps / 3.0,
            math.radians(self.fpa_deg) / 3.0,
            math.radians(self.heading_deg) / 3.0,
            self.accel_g * g0 / 3.0,
            self.accel_g * g0 / 3.0,
            self.accel_g * g0 / 3.0,
        ])


def inject_noise(features: np.ndarray, spec: NoiseSpec, rng: np.random.Generator,
                 g0: float) -> np.ndarray:
    """Additive zero-mean Gaussian noise on the first nine components and
    multiplicative noise on the stagnation pressure (applied before the log).

    Accepts a single 10-vector or an (N, 10) sequence; draws are i.i.d.
    """
    feats = np.asarray(features, dtype=float)
    single = feats.ndim == 1
    out = np.atleast_2d(feats).copy()
    n = out.shape[0]
    sig = spec.sigmas(g0)
    out[:, :9] += rng.standard_normal((n, 9)) * sig
    p_eps = rng.standard_normal(n) * (spec.pressure_frac / 3.0)
    # guard: keep the multiplicative factor positive
    p_eps = np.maximum(p_eps, -0.999)
    out[:, 9] += np.log10(1.0 + p_eps)
    return out[0] if single else out


class DensityEstimator:
    """Density source for the guidance predictor.

    density_at(h) must return a finite positive density for any altitude in
    the flight envelope (0..130 km); observe() may be called at most once per
    guidance cycle, before density_at is used for that cycle.
    """

    #: whether this estimator consumes onboard measurements (noise applies)
    uses_measurements = False

    def observe(self, meas: Measurement) -> None:
        del meas

    def density_at(self, h_km: float) -> float:
        raise NotImplementedError

    def lift_drag_scale(self) -> tuple[float, float]:
        """Multipliers applied to predicted lift and drag accelerations."""
        return 1.0, 1.0

    def density_spec(self) -> DensitySpec | None:
        """Kernel descriptor; None forces the generic Python predictor path."""
        return None


class ExponentialEstimator(DensityEstimator):
    """Stateless single-scale-height model used on every guidance call."""

    def __init__(self, model: ExponentialModel | None = None):
        self.model = model or ExponentialModel()

    def density_at(self, h_km: float) -> float:
        return self.model.surface_density * math.exp(-h_km / self.model.scale_height)

    def density_spec(self) -> DensitySpec:
        return DensitySpec(_kernels.DENS_EXPONENTIAL,
                           self.model.surface_density, self.model.scale_height)


class TruthProfileEstimator(DensityEstimator):
    """Perfect-knowledge estimator: hands the truth profile to guidance."""

    def __init__(self, profile: AtmosphereProfile):
        self.profile = profile
        self._spec = DensitySpec(_kernels.DENS_GRID,
                                 grid_h=np.asarray(profile.altitude_km),
                                 grid_logr=np.asarray(profile.log10_density))

    def density_at(self, h_km: float) -> float:
        return float(atmos.density_at(self.profile, h_km))

    def density_spec(self) -> DensitySpec:
        return self._spec


@dataclass(frozen=True)
class FadingMemoryState:
    """Filtered sensed/expected acceleration ratios."""

    rho_lift: float = 1.0
    rho_drag: float = 1.0
    beta: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.rho_lift <= 0.0 or self.rho_drag <= 0.0:
            raise ValueError("filtered ratios must be positive")

    def observe(self, lift_sensed: float, drag_sensed: float,
                lift_expected: float, drag_expected: float) -> "FadingMemoryState":
        """First-order fading-memory update of both ratios."""
        if lift_expected <= 0.0 or drag_expected <= 0.0:
            raise ValueError("expected accelerations must be positive")
        rho_l = lift_sensed / lift_expected
        rho_d = drag_sensed / drag_expected
        return replace(
            self,
            rho_lift=self.rho_lift + (1.0 - self.beta) * (rho_l - self.rho_lift),
            rho_drag=self.rho_drag + (1.0 - self.beta) * (rho_d - self.rho_drag),
        )


class FilteredExponentialEstimator(DensityEstimator):
    """Exponential model whose predicted lift/drag are rescaled by
    fading-memory-filtered sensed/expected acceleration ratios."""

    uses_measurements = True

    def __init__(self, model: ExponentialModel | None = None,
                 vehicle_lift_to_drag: float = 0.15,
                 ballistic_coefficient: float = 155.0,
                 planet_radius: float = 3_396_200.0,
                 beta: float = 0.9):
        self.model = model or ExponentialModel()
        self.filter = FadingMemoryState(beta=beta)
        self._ld = vehicle_lift_to_drag
        self._beta_b = ballistic_coefficient
        self._radius = planet_radius

    def observe(self, meas: Measurement) -> None:
        state = meas.state
        # decompose the sensed acceleration along the sensed velocity
        from .dynamics import spherical_to_cart  # local: avoids cycle at import

        v_vec = spherical_to_cart(state).v
        v_hat = v_vec / np.linalg.norm(v_vec)
        a = meas.accel
        drag_sensed = -float(np.dot(a, v_hat))
        lift_vec = a + drag_sensed * v_hat
        lift_sensed = float(np.linalg.norm(lift_vec))

        h_km = (state.r - self._radius) / 1000.0
        rho_exp = self.model.surface_density * math.exp(-h_km / self.model.scale_height)
        drag_expected = rho_exp * state.velocity**2 / (2.0 * self._beta_b)
        lift_expected = self._ld * drag_expected
        if drag_expected <= 0.0 or lift_expected <= 0.0 or drag_sensed <= 0.0:
            return  # pre-activation: nothing meaningful to filter
        self.filter = self.filter.observe(lift_sensed, drag_sensed,
                                          lift_expected, drag_expected)

    def density_at(self, h_km: float) -> float:
        return self.model.surface_density * math.exp(-h_km / self.model.scale_height)

    def lift_drag_scale(self) -> tuple[float, float]:
        return self.filter.rho_lift, self.filter.rho_drag

    def density_spec(self) -> DensitySpec:
        return DensitySpec(_kernels.DENS_EXPONENTIAL,
                           self.model.surface_density, self.model.scale_height)


class LstmDensityEstimator(DensityEstimator):
    """Sequence-to-sequence network estimator.

    Each observed measurement advances the recurrent state by one step; the
    latest output is the predicted pseudodensity profile, converted to a
    density grid for predictor queries. Before the first observation the
    prior is the nominal exponential law.
    """

    uses_measurements = True

    def __init__(self, model, prior: ExponentialModel | None = None):
        from .neural import lstm as _lstm  # deferred: keeps import light

        if model.stats is None:
            raise ValueError("network model has no normalization statistics")
        self.model = model
        self._lstm = _lstm
        self._state = _lstm.init_stream_state(model)
        self._steps = 0
        prior = prior or ExponentialModel()
        eta_prior = np.sqrt(-np.log10(
            prior.surface_density * np.exp(-PSEUDO_GRID_KM / prior.scale_height)))
        self._set_profile(eta_prior)

    def _set_profile(self, eta: np.ndarray) -> None:
        self.prediction = atmos.pseudo_from_eta(eta)
        self._grid_logr = -(self.prediction.eta**2)
        self._spec = DensitySpec(_kernels.DENS_GRID,
                                 grid_h=np.asarray(PSEUDO_GRID_KM),
                                 grid_logr=self._grid_logr)

    def observe(self, meas: Measurement) -> None:
        stats = self.model.stats
        x = (meas.vector - stats.feature_mean) / stats.feature_std
        out = self._lstm.stream_step(self.model, self._state, x)
        eta = out * stats.target_std + stats.target_mean
        self._steps += 1
        self._set_profile(eta)

    def density_at(self, h_km: float) -> float:
        return _kernels.density_eval(h_km, _kernels.DENS_GRID, 0.0, 1.0,
                                     np.asarray(PSEUDO_GRID_KM), self._grid_logr)

    def density_spec(self) -> DensitySpec:
        return self._spec

    @property
    def predicted_profile(self) -> PseudodensityProfile:
        return self.prediction


def make_estimator(kind: str, *, exponential_model: ExponentialModel | None = None,
                   vehicle=None, planet: PlanetModel | None = None,
                   model=None) -> DensityEstimator:
    """Factory for the estimator choices exposed on the command line."""
    if kind == "exponential":
        return ExponentialEstimator(exponential_model)
    if kind == "filter":
        veh_ld = vehicle.lift_to_drag if vehicle is not None else 0.15
        veh_beta = vehicle.ballistic_coefficient if vehicle is not None else 155.0
        radius = planet.radius if planet is not None else PlanetModel().radius
        return FilteredExponentialEstimator(exponential_model, veh_ld, veh_beta, radius)
    if kind == "lstm":
        if model is None:
            raise ValueError("lstm estimator requires a trained model")
        return LstmDensityEstimator(model, exponential_model)
    raise ValueError(f"unknown estimator kind: {kind!r}")

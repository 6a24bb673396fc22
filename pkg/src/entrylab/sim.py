"""Closed-loop entry simulation: truth Cartesian propagation at a fixed step
with guidance called at 1 Hz, pluggable truth atmosphere and density
estimator, optional sensor noise on the measurements, and trajectory logging.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .atmos import AtmosphereProfile, ExponentialModel, GasModel
from .dynamics import (
    CartesianState,
    PlanetModel,
    SphericalState,
    VehicleParams,
    aero_accels,
    cart_to_spherical,
    spherical_to_cart,
)
from .estimators import (
    DensityEstimator,
    DensitySpec,
    Measurement,
    NoiseSpec,
    build_measurement,
    inject_noise,
    stagnation_pressure_feature,
)
from .fnpeg import (
    GuidanceConfig,
    GuidanceLoop,
    GuidanceTarget,
    great_circle_azimuth,
    great_circle_range,
    wrap_angle,
)

LOG_COLUMNS = ("t", "r", "theta", "phi", "V", "gamma", "psi", "h",
               "a_x", "a_y", "a_z", "sigma_cmd", "rho_true")


@dataclass(frozen=True)
class Mission:
    """Entry interface and target conditions of the reference mission."""

    entry_altitude_km: float = 130.0
    entry_velocity: float = 4000.0  # m/s
    entry_longitude_deg: float = 90.0
    entry_latitude_deg: float = 45.0
    entry_fpa_deg: float = -15.1  # flight-path angle at entry interface
    entry_heading_deg: float | None = None  # None: aim along the great circle
    # added to the auto-aimed heading; pre-compensates the systematic
    # Coriolis heading drift accumulated before guidance activation
    entry_heading_offset_deg: float = 0.0
    target_altitude_km: float = 11.0
    target_velocity: float = 1214.0  # m/s
    target_longitude_deg: float = 101.031
    target_latitude_deg: float = 47.203

    def entry_spherical(self, planet: PlanetModel) -> SphericalState:
        theta = math.radians(self.entry_longitude_deg)
        phi = math.radians(self.entry_latitude_deg)
        if self.entry_heading_deg is None:
            psi = great_circle_azimuth(theta, phi,
                                       math.radians(self.target_longitude_deg),
                                       math.radians(self.target_latitude_deg))
            psi += math.radians(self.entry_heading_offset_deg)
        else:
            psi = math.radians(self.entry_heading_deg)
        return SphericalState(
            r=planet.radius + self.entry_altitude_km * 1000.0,
            theta=theta, phi=phi,
            velocity=self.entry_velocity,
            gamma=math.radians(self.entry_fpa_deg),
            psi=psi)

    def guidance_target(self, planet: PlanetModel) -> GuidanceTarget:
        return GuidanceTarget(
            r_tilde=(planet.radius + self.target_altitude_km * 1000.0) / planet.radius,
            v_tilde=self.target_velocity / planet.v_scale,
            theta=math.radians(self.target_longitude_deg),
            phi=math.radians(self.target_latitude_deg))


def make_guidance_config(mission: Mission, planet: PlanetModel,
                         **overrides) -> GuidanceConfig:
    """Guidance configuration with the deadband anchored at the mission's
    entry and target velocities."""
    return GuidanceConfig(
        target=mission.guidance_target(planet),
        deadband_v0=mission.entry_velocity,
        deadband_vf=mission.target_velocity,
        **overrides)


def _truth_spec(truth) -> DensitySpec:
    if isinstance(truth, AtmosphereProfile):
        return DensitySpec(_kernels.DENS_GRID,
                           grid_h=np.asarray(truth.altitude_km),
                           grid_logr=np.asarray(truth.log10_density))
    if isinstance(truth, ExponentialModel):
        return DensitySpec(_kernels.DENS_EXPONENTIAL,
                           truth.surface_density, truth.scale_height)
    if truth is None:  # vacuum (test configurations)
        return DensitySpec(_kernels.DENS_EXPONENTIAL, 0.0, 1.0)
    raise TypeError(f"unsupported truth atmosphere: {type(truth)!r}")


def truth_density(truth, h_km: float) -> float:
    spec = _truth_spec(truth)
    return _kernels.density_eval(h_km, spec.mode, spec.p0, spec.p1,
                                 spec.grid_h, spec.grid_logr)


@dataclass
class TrajectoryResult:
    s_f_rad: float  # signed terminal range-to-go (undershoot positive)
    s_f_km: float
    t_final: float
    terminal: SphericalState
    activated: bool
    activation_time: float | None
    features: np.ndarray  # (N, 10) measurement vectors from activation on
    feature_times: np.ndarray
    telemetry: list
    reversals: int
    log_rows: list | None
    failed: bool = False
    failure: str | None = None

    @property
    def abs_s_f_km(self) -> float:
        return abs(self.s_f_km)


def signed_range_to_go(state: SphericalState, target: GuidanceTarget,
                       planet: PlanetModel) -> tuple[float, float]:
    """Signed terminal range-to-go (rad, km): positive when the target is
    still ahead of the velocity vector (undershoot)."""
    s = great_circle_range(state.theta, state.phi, target.theta, target.phi)
    azimuth = great_circle_azimuth(state.theta, state.phi, target.theta, target.phi)
    sign = 1.0 if math.cos(wrap_angle(azimuth - state.psi)) >= 0.0 else -1.0
    s_signed = sign * s
    return s_signed, s_signed * planet.radius / 1000.0


def simulate_entry(mission: Mission,
                   estimator: DensityEstimator,
                   truth,
                   vehicle: VehicleParams = VehicleParams(),
                   planet: PlanetModel = PlanetModel(),
                   gas: GasModel = GasModel(),
                   gcfg: GuidanceConfig | None = None,
                   noise: NoiseSpec | None = None,
                   noise_rng: np.random.Generator | None = None,
                   dt: float = 0.1,
                   max_time: float = 2500.0,
                   record_log: bool = False) -> TrajectoryResult:
    """Fly one guided entry until the target energy is reached.

    `truth` is the true atmosphere (AtmosphereProfile or ExponentialModel).
    Noise, when given, perturbs the measurements consumed by the estimator
    and by guidance; it never touches the truth dynamics, and estimators that
    consume no measurements are unaffected by it.
    """
    if gcfg is None:
        gcfg = make_guidance_config(mission, planet)
    tspec = _truth_spec(truth)
    apply_noise = noise is not None and estimator.uses_measurements
    if apply_noise and noise_rng is None:
        noise_rng = np.random.default_rng(0)

    loop = GuidanceLoop(gcfg, vehicle, planet, estimator)
    state = spherical_to_cart(mission.entry_spherical(planet))
    command = loop._held_command()
    steps_per_cycle = max(1, int(round(1.0 / (gcfg.frequency_hz * dt))))

    t = 0.0
    features: list[np.ndarray] = []
    feature_times: list[float] = []
    log_rows: list[tuple] = [] if record_log else None
    activated = False
    activation_time = None
    terminal_cart: CartesianState | None = None
    failure = None

    n_cycles = int(math.ceil(max_time * gcfg.frequency_hz))
    for _cycle in range(n_cycles):
        sph = cart_to_spherical(state)
        h_km = (sph.r - planet.radius) / 1000.0
        rho_true = _kernels.density_eval(h_km, tspec.mode, tspec.p0, tspec.p1,
                                         tspec.grid_h, tspec.grid_logr)
        aero = aero_accels(state, command, rho_true, vehicle)
        p_static = rho_true * gas.specific_gas_constant * gas.reference_temperature
        log_p02 = stagnation_pressure_feature(sph.velocity, p_static, gas)
        meas_vec = build_measurement(t, sph, aero.vector, log_p02).vector
        if apply_noise:
            meas_vec = inject_noise(meas_vec, noise, noise_rng, planet.g0)
        meas = Measurement(t, meas_vec)
        nav = meas.state if apply_noise else sph

        command = loop.step(t, meas, nav)
        rec = loop.telemetry[-1]
        if rec.active:
            if not activated:
                activated = True
                activation_time = t
            features.append(meas.vector)
            feature_times.append(t)
        if record_log:
            log_rows.append((t, sph.r, sph.theta, sph.phi, sph.velocity,
                             sph.gamma, sph.psi, h_km,
                             aero.vector[0], aero.vector[1], aero.vector[2],
                             command, rho_true))

        out = _kernels.propagate_entry(
            state.r[0], state.r[1], state.r[2],
            state.v[0], state.v[1], state.v[2],
            command, dt, steps_per_cycle,
            planet.mu, planet.omega,
            vehicle.ballistic_coefficient, vehicle.lift_to_drag,
            tspec.mode, tspec.p0, tspec.p1, tspec.grid_h, tspec.grid_logr,
            planet.radius, planet.g0, gcfg.target.e_final)
        rx, ry, rz, vx, vy, vz, _steps, crossed, t_elapsed = out
        state = CartesianState(np.array([rx, ry, rz]), np.array([vx, vy, vz]))
        t += t_elapsed
        if crossed:
            terminal_cart = state
            break
    else:
        failure = f"target energy not reached within {max_time:.0f} s"

    if terminal_cart is None:
        terminal = cart_to_spherical(state)
        s_rad, s_km = signed_range_to_go(terminal, gcfg.target, planet)
        return TrajectoryResult(s_rad, s_km, t, terminal, activated,
                                activation_time,
                                np.array(features) if features else np.empty((0, 10)),
                                np.array(feature_times), loop.telemetry,
                                loop.reversals, log_rows, failed=True,
                                failure=failure)

    terminal = cart_to_spherical(terminal_cart)
    s_rad, s_km = signed_range_to_go(terminal, gcfg.target, planet)
    return TrajectoryResult(s_rad, s_km, t, terminal, activated, activation_time,
                            np.array(features) if features else np.empty((0, 10)),
                            np.array(feature_times), loop.telemetry,
                            loop.reversals, log_rows)


def save_trajectory_log(path, result: TrajectoryResult, manifest: dict | None = None) -> None:
    """Write the 1 Hz trajectory log as CSV plus a JSON run manifest."""
    if result.log_rows is None:
        raise ValueError("trajectory was simulated without record_log=True")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(LOG_COLUMNS)
        for row in result.log_rows:
            writer.writerow([repr(float(v)) for v in row])
    info = {
        "format": "entrylab-trajectory-v1",
        "columns": list(LOG_COLUMNS),
        "s_f_rad": result.s_f_rad,
        "s_f_km": result.s_f_km,
        "t_final": result.t_final,
        "activated": result.activated,
        "activation_time": result.activation_time,
        "reversals": result.reversals,
        "failed": result.failed,
        "failure": result.failure,
    }
    if manifest:
        info.update(manifest)
    path.with_suffix(".json").write_text(json.dumps(info, indent=2))


def load_trajectory_log(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]

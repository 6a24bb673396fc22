"""Predictor-corrector bank-angle entry guidance.

Longitudinal channel: a numeric predictor integrates the non-dimensional
longitudinal dynamics over energy with a linear bank-magnitude profile, and a
step-halving Newton/secant corrector drives the terminal range error to zero.
Lateral channel: bank-sign reversals inside a velocity-dependent heading
deadband. Guidance activates once the sensed aerodynamic load is high enough
for bank control to be effective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dynamics import PlanetModel, SphericalState, VehicleParams
from .estimators import DensityEstimator, Measurement


class GuidanceError(Exception):
    pass


class PredictionError(GuidanceError):
    """Predictor failed: drag non-positive (energy no longer monotone) or the
    integration produced a non-finite state."""


class CorrectorStall(GuidanceError):
    """Line search exhausted its halvings without reducing |z|."""


def energy(r_tilde: float, v_tilde: float) -> float:
    """Energy-like variable e = 1/r~ - V~^2/2 (monotone along entry)."""
    if r_tilde <= 0.0:
        raise ValueError("r_tilde must be positive")
    return 1.0 / r_tilde - 0.5 * v_tilde * v_tilde


def bank_profile(e: float, e0: float, ef: float, sigma0: float, sigma_f: float) -> float:
    """Linear-in-energy bank magnitude between sigma0 at e0 and sigma_f at ef."""
    if e0 == ef:
        raise ValueError("bank profile undefined for e0 == ef")
    return sigma0 + (e - e0) / (ef - e0) * (sigma_f - sigma0)


def wrap_angle(x: float) -> float:
    """Wrap to (-pi, pi]; exact identity for in-range values."""
    if -math.pi < x <= math.pi:
        return x
    w = math.fmod(x + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def great_circle_range(theta: float, phi: float, theta_t: float, phi_t: float) -> float:
    """Great-circle angle (rad) between two (longitude, latitude) points."""
    c = (math.sin(phi) * math.sin(phi_t)
         + math.cos(phi) * math.cos(phi_t) * math.cos(theta_t - theta))
    return math.acos(max(-1.0, min(1.0, c)))


def great_circle_azimuth(theta: float, phi: float, theta_t: float, phi_t: float) -> float:
    """Initial azimuth (rad, clockwise from north) of the great circle to the
    target."""
    dlon = theta_t - theta
    y = math.sin(dlon) * math.cos(phi_t)
    x = (math.cos(phi) * math.sin(phi_t)
         - math.sin(phi) * math.cos(phi_t) * math.cos(dlon))
    return math.atan2(y, x)


@dataclass(frozen=True)
class GuidanceTarget:
    """Terminal conditions: non-dimensional radius/velocity plus the target
    coordinates used by the lateral channel and range bookkeeping."""

    r_tilde: float
    v_tilde: float
    theta: float
    phi: float
    range_offset: float = 0.0  # desired terminal range-to-go s_f*, rad

    @property
    def e_final(self) -> float:
        return energy(self.r_tilde, self.v_tilde)


@dataclass(frozen=True)
class GuidanceConfig:
    target: GuidanceTarget
    sigma_f: float = math.radians(70.0)
    epsilon: float = 1e-6
    frequency_hz: float = 1.0
    activation_load: float = 1.47  # m/s^2, 0.15 g
    deadband_width0: float = math.radians(2.0)
    deadband_widthf: float = math.radians(1.5)
    deadband_v0: float = 4000.0  # m/s, anchor for deadband_width0
    deadband_vf: float = 1214.0  # m/s, anchor for deadband_widthf
    predictor_steps: int = 200
    fd_delta: float = math.radians(1.0)
    max_halvings: int = 20
    max_iterations: int = 20
    initial_sigma0: float = math.radians(45.0)
    min_energy_span: float = 1e-6

    def __post_init__(self):
        if self.epsilon <= 0.0 or self.frequency_hz <= 0.0:
            raise ValueError("epsilon and frequency must be positive")
        if not 0.0 < self.sigma_f < math.pi / 2:
            raise ValueError("sigma_f must lie in (0, pi/2)")

    @property
    def stop_threshold(self) -> float:
        """Stopping tolerance in internal (radian) units.

        epsilon applies to |z * dz/dsigma0| with the range error z expressed
        in degrees and the bank angle in radians, so the radian equivalent
        carries two deg->rad factors.
        """
        return self.epsilon * (math.pi / 180.0) ** 2

    def deadband(self, v: float) -> float:
        """Velocity-dependent heading deadband, linear through the anchors."""
        c1 = (self.deadband_width0 - self.deadband_widthf) / (self.deadband_v0 - self.deadband_vf)
        c0 = self.deadband_widthf - c1 * self.deadband_vf
        return c1 * v + c0


@dataclass(frozen=True)
class LongitudinalState:
    """Non-dimensional predictor initial conditions.

    p0z/t0z/nz describe the great circle from the current position toward
    the target (z-components of the position unit vector, path tangent, and
    plane normal); they feed the planet-rotation terms of the predictor.
    Zero values with omega_nd = 0 reduce to the non-rotating form.
    """

    r_tilde: float
    v_tilde: float
    gamma: float
    range_to_go: float  # rad
    p0z: float = 0.0
    t0z: float = 0.0
    nz: float = 0.0
    omega_nd: float = 0.0

    @property
    def e(self) -> float:
        return energy(self.r_tilde, self.v_tilde)


def path_geometry(theta: float, phi: float, azimuth: float) -> tuple[float, float, float]:
    """(p0z, t0z, nz) of the great circle leaving (theta, phi) at `azimuth`."""
    cp, sp = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    p0 = np.array([cp * ct, cp * st, sp])
    east = np.array([-st, ct, 0.0])
    north = np.cross(p0, east)
    t0 = math.cos(azimuth) * north + math.sin(azimuth) * east
    nz = p0[0] * t0[1] - p0[1] * t0[0]
    return sp, float(t0[2]), float(nz)


def _predict_range_python(lon, sigma0, cfg, veh, planet, density_at, scale_l, scale_d):
    """Generic predictor path for estimators without a kernel descriptor.

    Mirrors the compiled kernel step for step.
    """
    e0 = lon.e
    ef = cfg.target.e_final
    n = cfg.predictor_steps
    de = (ef - e0) / n
    radius = planet.radius
    beta = veh.ballistic_coefficient
    ld = veh.lift_to_drag
    sigma_f = cfg.sigma_f
    s_start = lon.range_to_go
    omega_nd_v = lon.omega_nd

    def rhs(r, v, gam, s, e):
        h_km = (r - 1.0) * radius / 1000.0
        rho = density_at(h_km)
        d_base = rho * v * v * radius / (2.0 * beta)
        d = scale_d * d_base
        if d <= 0.0:
            raise PredictionError("non-positive predicted drag")
        lift = scale_l * ld * d_base
        sig = sigma0 + (e - e0) / (ef - e0) * (sigma_f - sigma0)
        sg, cg = math.sin(gam), math.cos(gam)
        r2 = r * r
        x = s_start - s
        cx, sx = math.cos(x), math.sin(x)
        pz = lon.p0z * cx + lon.t0z * sx
        tz = -lon.p0z * sx + lon.t0z * cx
        cp2 = 1.0 - pz * pz
        om2r = omega_nd_v * omega_nd_v * r
        cterm = om2r * (sg * cp2 - cg * pz * tz)
        deff = d - cterm
        if deff <= 0.0:
            raise PredictionError("non-positive predicted drag")
        vnum = -d - sg / r2 + cterm
        gnum = (lift * math.cos(sig) - cg / r2 + v * v * cg / r
                + 2.0 * omega_nd_v * v * lon.nz + om2r * (cg * cp2 + sg * tz * pz))
        return (sg / deff, vnum / (v * deff), gnum / (v * v * deff),
                -cg / (r * deff))

    r, v, gam, s = lon.r_tilde, lon.v_tilde, lon.gamma, lon.range_to_go
    for k in range(n):
        e = e0 + k * de
        k1 = rhs(r, v, gam, s, e)
        k2 = rhs(r + 0.5 * de * k1[0], v + 0.5 * de * k1[1], gam + 0.5 * de * k1[2],
                 s + 0.5 * de * k1[3], e + 0.5 * de)
        k3 = rhs(r + 0.5 * de * k2[0], v + 0.5 * de * k2[1], gam + 0.5 * de * k2[2],
                 s + 0.5 * de * k2[3], e + 0.5 * de)
        k4 = rhs(r + de * k3[0], v + de * k3[1], gam + de * k3[2],
                 s + de * k3[3], e + de)
        r += de / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        v += de / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        gam += de / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        s += de / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
        if not all(map(math.isfinite, (r, v, gam, s))) or r <= 0.0 or v <= 0.0:
            raise PredictionError("non-finite predictor state")
    return s - cfg.target.range_offset


def predict_range(lon: LongitudinalState, sigma0: float, estimator: DensityEstimator,
                  cfg: GuidanceConfig, veh: VehicleParams, planet: PlanetModel) -> float:
    """Terminal range error z = s(e_f) - s_f* for a given initial bank
    magnitude, integrating the longitudinal dynamics over energy."""
    spec = estimator.density_spec()
    scale_l, scale_d = estimator.lift_drag_scale()
    if spec is None:
        return _predict_range_python(lon, sigma0, cfg, veh, planet,
                                     estimator.density_at, scale_l, scale_d)
    s_end, code = _kernels.predict_range_kernel(
        lon.r_tilde, lon.v_tilde, lon.gamma, lon.range_to_go,
        lon.e, cfg.target.e_final, sigma0, cfg.sigma_f, cfg.predictor_steps,
        spec.mode, spec.p0, spec.p1, spec.grid_h, spec.grid_logr,
        scale_l, scale_d, veh.lift_to_drag, veh.ballistic_coefficient,
        planet.radius, lon.omega_nd, lon.p0z, lon.t0z, lon.nz)
    if code == _kernels.PREDICT_NONPOSITIVE_DRAG:
        raise PredictionError("non-positive predicted drag")
    if code == _kernels.PREDICT_NONFINITE:
        raise PredictionError("non-finite predictor state")
    return s_end - cfg.target.range_offset


def _clamp_bank(sigma: float) -> float:
    return max(0.0, min(math.pi, sigma))


def correct_bank(sigma0: float, z0: float, deriv: float, z_fn,
                 cfg: GuidanceConfig) -> tuple[float, float, int]:
    """One Newton update with step-halving line search.

    Returns (accepted sigma0, its z, predictions spent). Raises
    CorrectorStall when no halving yields |z| < |z0|.
    """
    predictions = 0
    for i in range(cfg.max_halvings + 1):
        lam = 0.5**i
        cand = _clamp_bank(sigma0 - lam * z0 / deriv)
        if cand == sigma0:
            continue
        try:
            z_cand = z_fn(cand)
        except PredictionError:
            predictions += 1
            continue
        predictions += 1
        if abs(z_cand) < abs(z0):
            return cand, z_cand, predictions
    raise CorrectorStall(f"no |z|-decrease within {cfg.max_halvings} halvings")


@dataclass
class ConvergeResult:
    sigma0: float
    z: float
    deriv: float | None
    iterations: int
    predictions: int
    converged: bool
    stalled: bool
    accepted_abs_z: list = field(default_factory=list)


def converge_bank(sigma_init: float, z_fn, cfg: GuidanceConfig,
                  deriv_hint: float | None = None) -> ConvergeResult:
    """Run the predictor-corrector until |z * dz/dsigma0| <= epsilon.

    The derivative estimate starts from finite differences (or a hint carried
    over from the previous guidance call) and switches to secant updates as
    iterates accumulate.
    """
    counter = [0]

    def zeval(sig):
        counter[0] += 1
        return z_fn(sig)

    sigma = _clamp_bank(sigma_init)
    z = zeval(sigma)
    deriv = deriv_hint
    deriv_is_hint = deriv_hint is not None
    accepted = [abs(z)]
    iterations = 0
    converged = False
    stalled = False

    def fd_derivative(sig, z_at_sig):
        delta = cfg.fd_delta if sig + cfg.fd_delta <= math.pi else -cfg.fd_delta
        for d in (delta, -delta):
            probe = sig + d
            if not 0.0 <= probe <= math.pi:
                continue
            try:
                return (zeval(probe) - z_at_sig) / d
            except PredictionError:
                continue
        return None

    while iterations < cfg.max_iterations:
        if deriv is None:
            deriv = fd_derivative(sigma, z)
            deriv_is_hint = False
            if deriv is None:
                stalled = True
                break
        if abs(z * deriv) <= cfg.stop_threshold:
            converged = True
            break
        if abs(deriv) < 1e-12:
            stalled = True
            break
        try:
            cand, z_cand, spent = correct_bank(sigma, z, deriv, zeval, cfg)
        except CorrectorStall:
            if deriv_is_hint:
                # stale derivative from the previous call: retry with a
                # fresh finite-difference estimate before giving up
                deriv = None
                continue
            stalled = True
            break
        del spent
        deriv = (z_cand - z) / (cand - sigma)
        deriv_is_hint = False
        sigma, z = cand, z_cand
        accepted.append(abs(z))
        iterations += 1
    return ConvergeResult(sigma, z, deriv, iterations, counter[0],
                          converged, stalled, accepted)


def lateral_channel(psi: float, azimuth: float, v: float, sign: int,
                    cfg: GuidanceConfig) -> int:
    """Bank-sign logic: command a reversal once the heading offset reaches
    the velocity-dependent deadband."""
    offset = wrap_angle(azimuth - psi)
    if abs(offset) >= cfg.deadband(v):
        if offset > 0.0:
            return 1
        if offset < 0.0:
            return -1
        return -sign
    return sign


@dataclass
class GuidanceCallRecord:
    time: float
    active: bool
    sigma0: float
    bank_command: float
    z: float
    iterations: int
    predictions: int
    converged: bool
    stalled: bool
    reversal: bool
    accepted_abs_z: list
    deriv: float = math.nan


class GuidanceLoop:
    """Per-trajectory guidance state machine (call once per cycle)."""

    def __init__(self, cfg: GuidanceConfig, veh: VehicleParams,
                 planet: PlanetModel, estimator: DensityEstimator):
        self.cfg = cfg
        self.veh = veh
        self.planet = planet
        self.estimator = estimator
        self.sigma0 = cfg.initial_sigma0
        self.sign = 0  # set at first active call, toward the target
        self.deriv: float | None = None
        self.telemetry: list[GuidanceCallRecord] = []
        self.reversals = 0

    def _held_command(self) -> float:
        sign = self.sign if self.sign != 0 else 1
        return sign * self.sigma0

    def step(self, t: float, meas: Measurement, nav: SphericalState) -> float:
        """One guidance call. `nav` is the state the guidance navigates with
        (the sensed state when measurements drive the estimator)."""
        cfg = self.cfg
        active = meas.load >= cfg.activation_load
        if active:
            self.estimator.observe(meas)
        if not active:
            self.telemetry.append(GuidanceCallRecord(
                t, False, self.sigma0, self._held_command(), math.nan,
                0, 0, False, False, False, []))
            return self._held_command()

        r_t = nav.r / self.planet.radius
        v_t = nav.velocity / self.planet.v_scale
        e_now = energy(r_t, v_t)
        ef = cfg.target.e_final
        azimuth = great_circle_azimuth(nav.theta, nav.phi,
                                       cfg.target.theta, cfg.target.phi)
        if self.sign == 0:
            off = wrap_angle(azimuth - nav.psi)
            self.sign = 1 if off >= 0.0 else -1

        if ef - e_now < cfg.min_energy_span:
            # effectively at the target energy: nothing left to predict
            self.telemetry.append(GuidanceCallRecord(
                t, True, self.sigma0, self._held_command(), math.nan,
                0, 0, False, False, False, []))
            return self._held_command()

        s = great_circle_range(nav.theta, nav.phi, cfg.target.theta, cfg.target.phi)
        p0z, t0z, nz = path_geometry(nav.theta, nav.phi, azimuth)
        omega_nd = self.planet.omega * math.sqrt(self.planet.radius / self.planet.g0)
        lon = LongitudinalState(r_t, v_t, nav.gamma, s, p0z, t0z, nz, omega_nd)

        def z_fn(sig):
            return predict_range(lon, sig, self.estimator, cfg, self.veh, self.planet)

        try:
            res = converge_bank(self.sigma0, z_fn, cfg, self.deriv)
        except PredictionError:
            # initial prediction failed outright: hold the previous command
            self.deriv = None
            self.telemetry.append(GuidanceCallRecord(
                t, True, self.sigma0, self._held_command(), math.nan,
                0, 1, False, True, False, []))
            return self._held_command()

        self.sigma0 = res.sigma0
        self.deriv = res.deriv

        old_sign = self.sign
        self.sign = lateral_channel(nav.psi, azimuth, nav.velocity, self.sign, cfg)
        reversal = self.sign != old_sign
        if reversal:
            self.reversals += 1

        command = self.sign * self.sigma0
        self.telemetry.append(GuidanceCallRecord(
            t, True, self.sigma0, command, res.z, res.iterations,
            res.predictions, res.converged, res.stalled, reversal,
            res.accepted_abs_z, res.deriv if res.deriv is not None else math.nan))
        return command

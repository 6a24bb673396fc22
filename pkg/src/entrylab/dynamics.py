"""Entry-vehicle dynamics.

Cartesian equations of motion in a planet-centered, planet-fixed frame
(truth propagation), the spherical-coordinate form used by guidance,
conversions between the two representations, and a fixed-step RK4 integrator.

Frame: first axis through (0 deg lon, 0 deg lat), third axis along the spin
axis, second axis completing the right-hand set. Velocity is planet-relative.
Heading is measured clockwise from north in the local horizontal plane;
flight-path angle is positive above the local horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PlanetModel:
    """Gravity and rotation constants (Mars defaults)."""

    mu: float = 4.305e13  # m^3/s^2
    omega: float = math.radians(4.06e-3)  # rad/s
    radius: float = 3_396_200.0  # m

    def __post_init__(self):
        if self.mu <= 0.0 or self.radius <= 0.0 or self.omega < 0.0:
            raise ValueError("planet constants must be positive (omega >= 0)")

    @property
    def g0(self) -> float:
        """Surface gravitational acceleration mu / R^2."""
        return self.mu / self.radius**2

    @property
    def v_scale(self) -> float:
        """Velocity non-dimensionalization constant sqrt(g0 R)."""
        return math.sqrt(self.g0 * self.radius)


@dataclass(frozen=True)
class VehicleParams:
    """Inflatable-decelerator class entry vehicle, constant aero coefficients."""

    mass: float = 4.9e4  # kg
    ballistic_coefficient: float = 155.0  # kg/m^2
    lift_to_drag: float = 0.15

    def __post_init__(self):
        if self.ballistic_coefficient <= 0.0:
            raise ValueError("ballistic coefficient must be positive")
        if self.lift_to_drag < 0.0:
            raise ValueError("L/D must be non-negative")


@dataclass(frozen=True)
class CartesianState:
    r: np.ndarray  # position, m, planet-fixed
    v: np.ndarray  # planet-relative velocity, m/s

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).reshape(3).copy()
        v = np.asarray(self.v, dtype=float).reshape(3).copy()
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "v", v)
        r.setflags(write=False)
        v.setflags(write=False)
        if np.linalg.norm(r) <= 0.0:
            raise ValueError("position must be nonzero")


@dataclass(frozen=True)
class SphericalState:
    r: float  # radius, m
    theta: float  # longitude, rad
    phi: float  # latitude, rad
    velocity: float  # planet-relative speed, m/s
    gamma: float  # flight-path angle, rad
    psi: float  # heading, rad, clockwise from north

    def __post_init__(self):
        if abs(self.phi) > math.pi / 2 + 1e-12:
            raise ValueError("latitude outside [-pi/2, pi/2]")


@dataclass(frozen=True)
class AeroAccel:
    lift: float  # m/s^2
    drag: float  # m/s^2
    vector: np.ndarray  # lift + drag, m/s^2, planet-fixed components

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=float).reshape(3).copy()
        object.__setattr__(self, "vector", vec)
        vec.setflags(write=False)


def aero_accels(state: CartesianState, sigma: float, rho: float,
                veh: VehicleParams) -> AeroAccel:
    """Lift and drag accelerations for bank angle sigma.

    Drag is antiparallel to the relative velocity; lift lies in the plane
    obtained by rotating the in-plane up-direction about the velocity by
    sigma, with positive sigma banking toward increasing heading.
    """
    r = state.r
    v = state.v
    speed = float(np.linalg.norm(v))
    if speed <= 0.0:
        raise ValueError("velocity must be nonzero")
    h_vec = np.cross(r, v)
    h_norm = float(np.linalg.norm(h_vec))
    if h_norm <= 1e-9 * float(np.linalg.norm(r)) * speed:
        raise ValueError("degenerate geometry: position parallel to velocity")

    drag = rho * speed**2 / (2.0 * veh.ballistic_coefficient)
    lift = veh.lift_to_drag * drag

    up_inplane = np.cross(v, h_vec) / (speed * h_norm)  # unit, in (r,v) plane
    # minus sign: positive bank must rotate lift toward increasing heading
    # (clockwise from north), matching the spherical-form psi equation
    side = -h_vec / h_norm
    lift_vec = lift * (math.cos(sigma) * up_inplane + math.sin(sigma) * side)
    drag_vec = -drag * v / speed
    return AeroAccel(lift=lift, drag=drag, vector=lift_vec + drag_vec)


def cartesian_derivatives(state: CartesianState, sigma: float, rho: float,
                          veh: VehicleParams, planet: PlanetModel) -> tuple[np.ndarray, np.ndarray]:
    """(dr/dt, dv/dt) in the rotating planet-fixed frame."""
    r = state.r
    v = state.v
    aero = aero_accels(state, sigma, rho, veh) if rho > 0.0 else None
    rn = float(np.linalg.norm(r))
    grav = -planet.mu / rn**3 * r
    omega_vec = np.array([0.0, 0.0, planet.omega])
    coriolis = -2.0 * np.cross(omega_vec, v)
    centrifugal = -np.cross(omega_vec, np.cross(omega_vec, r))
    accel = grav + coriolis + centrifugal
    if aero is not None:
        accel = accel + aero.vector
    return v.copy(), accel


def spherical_derivatives(state: SphericalState, sigma: float, rho: float,
                          veh: VehicleParams, planet: PlanetModel) -> tuple[float, ...]:
    """Six-state spherical equations of motion (rotating planet)."""
    r, theta, phi, v, gamma, psi = (
        state.r, state.theta, state.phi, state.velocity, state.gamma, state.psi,
    )
    del theta
    if abs(abs(phi) - math.pi / 2) < 1e-9:
        raise ValueError("polar singularity: |latitude| = pi/2")
    if v <= 0.0:
        raise ValueError("velocity must be positive")

    drag = rho * v**2 / (2.0 * veh.ballistic_coefficient)
    lift = veh.lift_to_drag * drag
    g = planet.mu / r**2
    omega = planet.omega

    sg, cg = math.sin(gamma), math.cos(gamma)
    sp, cp = math.sin(phi), math.cos(phi)
    spsi, cpsi = math.sin(psi), math.cos(psi)

    r_dot = v * sg
    theta_dot = v * cg * spsi / (r * cp)
    phi_dot = v * cg * cpsi / r
    v_dot = -drag - g * sg + omega**2 * r * cp * (sg * cp - cg * sp * cpsi)
    gamma_dot = (
        lift * math.cos(sigma)
        - g * cg
        + (v**2 / r) * cg
        + 2.0 * omega * v * cp * spsi
        + omega**2 * r * cp * (cg * cp + sg * cpsi * sp)
    ) / v
    psi_dot = (
        lift * math.sin(sigma) / cg
        + (v**2 / r) * cg * spsi * math.tan(phi)
        - 2.0 * omega * v * (math.tan(gamma) * cpsi * cp - sp)
        + (omega**2 * r / cg) * spsi * sp * cp
    ) / v
    return r_dot, theta_dot, phi_dot, v_dot, gamma_dot, psi_dot


def cart_to_spherical(state: CartesianState) -> SphericalState:
    """Convert planet-fixed Cartesian position/velocity to spherical state."""
    r_vec = state.r
    v_vec = state.v
    rn = float(np.linalg.norm(r_vec))
    speed = float(np.linalg.norm(v_vec))
    if rn <= 0.0 or speed <= 0.0:
        raise ValueError("degenerate state: zero radius or velocity")
    phi = math.asin(max(-1.0, min(1.0, r_vec[2] / rn)))
    if abs(abs(phi) - math.pi / 2) < 1e-9:
        raise ValueError("polar singularity: |latitude| = pi/2")
    theta = math.atan2(r_vec[1], r_vec[0])

    up = r_vec / rn
    east = np.cross(np.array([0.0, 0.0, 1.0]), up)
    east /= np.linalg.norm(east)
    north = np.cross(up, east)

    v_up = float(np.dot(v_vec, up))
    gamma = math.asin(max(-1.0, min(1.0, v_up / speed)))
    psi = math.atan2(float(np.dot(v_vec, east)), float(np.dot(v_vec, north)))
    return SphericalState(rn, theta, phi, speed, gamma, psi)


def spherical_to_cart(state: SphericalState) -> CartesianState:
    """Inverse of cart_to_spherical."""
    if abs(abs(state.phi) - math.pi / 2) < 1e-9:
        raise ValueError("polar singularity: |latitude| = pi/2")
    if state.velocity <= 0.0:
        raise ValueError("velocity must be positive")
    cp, sp = math.cos(state.phi), math.sin(state.phi)
    ct, st = math.cos(state.theta), math.sin(state.theta)
    up = np.array([cp * ct, cp * st, sp])
    east = np.array([-st, ct, 0.0])
    north = np.cross(up, east)
    r_vec = state.r * up
    cg, sg = math.cos(state.gamma), math.sin(state.gamma)
    v_vec = state.velocity * (
        sg * up + cg * (math.cos(state.psi) * north + math.sin(state.psi) * east)
    )
    return CartesianState(r_vec, v_vec)


def altitude_km(state: CartesianState, planet: PlanetModel) -> float:
    return (float(np.linalg.norm(state.r)) - planet.radius) / 1000.0


def rk4_step(deriv_fn, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step of dy/dt = deriv_fn(t, y)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    y = np.asarray(y, dtype=float)
    k1 = np.asarray(deriv_fn(t, y))
    k2 = np.asarray(deriv_fn(t + dt / 2.0, y + dt / 2.0 * k1))
    k3 = np.asarray(deriv_fn(t + dt / 2.0, y + dt / 2.0 * k2))
    k4 = np.asarray(deriv_fn(t + dt, y + dt * k3))
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def specific_energy(state: CartesianState, planet: PlanetModel) -> float:
    """Keplerian specific orbital energy v^2/2 - mu/r (vacuum invariant)."""
    rn = float(np.linalg.norm(state.r))
    return 0.5 * float(np.dot(state.v, state.v)) - planet.mu / rn


def dimensionless_energy(r: float, v: float, planet: PlanetModel) -> float:
    """Energy-like variable e = 1/r_tilde - V_tilde^2 / 2."""
    r_t = r / planet.radius
    v_t = v / planet.v_scale
    return 1.0 / r_t - 0.5 * v_t**2

"""JIT-compiled inner loops: truth-trajectory propagation and the guidance
range predictor.

Density models are passed as a small descriptor (mode + parameters + optional
grid arrays) so one compiled kernel serves the exponential law, tabulated
profiles, and network-predicted profiles alike. Falls back to plain Python
when numba is unavailable; results are identical either way.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba present in supported envs
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(func):
            return func

        return deco


DENS_EXPONENTIAL = 0
DENS_GRID = 1

EMPTY_GRID = np.empty(0, dtype=np.float64)

# predictor failure codes
PREDICT_OK = 0
PREDICT_NONPOSITIVE_DRAG = 1
PREDICT_NONFINITE = 2


@njit(cache=True)
def density_eval(h_km, mode, p0, p1, grid_h, grid_logr):
    """Density lookup. mode 0: p0*exp(-h/p1). mode 1: log-linear on a grid
    with end-segment extrapolation."""
    if mode == DENS_EXPONENTIAL:
        return p0 * math.exp(-h_km / p1)
    n = grid_h.shape[0]
    if h_km <= grid_h[0]:
        i = 0
    elif h_km >= grid_h[n - 2]:
        i = n - 2
    else:
        lo = 0
        hi = n - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if grid_h[mid] <= h_km:
                lo = mid
            else:
                hi = mid
        i = lo
    w = (h_km - grid_h[i]) / (grid_h[i + 1] - grid_h[i])
    return 10.0 ** (grid_logr[i] * (1.0 - w) + grid_logr[i + 1] * w)


@njit(cache=True)
def _cart_accel(rx, ry, rz, vx, vy, vz, sigma, mu, omega, beta, ld,
                mode, p0, p1, grid_h, grid_logr, radius):
    rn = math.sqrt(rx * rx + ry * ry + rz * rz)
    vn = math.sqrt(vx * vx + vy * vy + vz * vz)
    gmr3 = -mu / (rn * rn * rn)
    ax = gmr3 * rx + 2.0 * omega * vy + omega * omega * rx
    ay = gmr3 * ry - 2.0 * omega * vx + omega * omega * ry
    az = gmr3 * rz
    h_km = (rn - radius) / 1000.0
    rho = density_eval(h_km, mode, p0, p1, grid_h, grid_logr)
    if rho > 0.0 and vn > 0.0:
        drag = rho * vn * vn / (2.0 * beta)
        lift = ld * drag
        hx = ry * vz - rz * vy
        hy = rz * vx - rx * vz
        hz = rx * vy - ry * vx
        hn = math.sqrt(hx * hx + hy * hy + hz * hz)
        if hn > 1e-12 * rn * vn:
            inv = 1.0 / (vn * hn)
            ux = (vy * hz - vz * hy) * inv
            uy = (vz * hx - vx * hz) * inv
            uz = (vx * hy - vy * hx) * inv
            cs = math.cos(sigma)
            ss = math.sin(sigma)
            # side direction -h/hn: positive bank turns toward increasing heading
            ax += lift * (cs * ux - ss * hx / hn)
            ay += lift * (cs * uy - ss * hy / hn)
            az += lift * (cs * uz - ss * hz / hn)
        dscale = -drag / vn
        ax += dscale * vx
        ay += dscale * vy
        az += dscale * vz
    return ax, ay, az


@njit(cache=True)
def propagate_entry(rx, ry, rz, vx, vy, vz, sigma, dt, nsteps,
                    mu, omega, beta, ld, mode, p0, p1, grid_h, grid_logr,
                    radius, g0, e_final):
    """RK4-propagate the Cartesian truth state for up to nsteps steps.

    After each step the dimensionless energy e = R/r - V^2/(2 g0 R) is
    checked against e_final; on a crossing the state and elapsed time are
    linearly interpolated within the step. Returns
    (rx..vz, steps_done, crossed, t_elapsed).
    """
    g0r2 = 2.0 * g0 * radius
    rn = math.sqrt(rx * rx + ry * ry + rz * rz)
    vsq = vx * vx + vy * vy + vz * vz
    e_prev = radius / rn - vsq / g0r2
    if e_prev >= e_final:
        return rx, ry, rz, vx, vy, vz, 0, 1, 0.0
    t = 0.0
    for k in range(nsteps):
        prx, pry, prz, pvx, pvy, pvz = rx, ry, rz, vx, vy, vz

        a1x, a1y, a1z = _cart_accel(rx, ry, rz, vx, vy, vz, sigma, mu, omega,
                                    beta, ld, mode, p0, p1, grid_h, grid_logr, radius)
        k1rx, k1ry, k1rz = vx, vy, vz

        hrx = rx + 0.5 * dt * k1rx
        hry = ry + 0.5 * dt * k1ry
        hrz = rz + 0.5 * dt * k1rz
        hvx = vx + 0.5 * dt * a1x
        hvy = vy + 0.5 * dt * a1y
        hvz = vz + 0.5 * dt * a1z
        a2x, a2y, a2z = _cart_accel(hrx, hry, hrz, hvx, hvy, hvz, sigma, mu, omega,
                                    beta, ld, mode, p0, p1, grid_h, grid_logr, radius)
        k2rx, k2ry, k2rz = hvx, hvy, hvz

        hrx = rx + 0.5 * dt * k2rx
        hry = ry + 0.5 * dt * k2ry
        hrz = rz + 0.5 * dt * k2rz
        hvx = vx + 0.5 * dt * a2x
        hvy = vy + 0.5 * dt * a2y
        hvz = vz + 0.5 * dt * a2z
        a3x, a3y, a3z = _cart_accel(hrx, hry, hrz, hvx, hvy, hvz, sigma, mu, omega,
                                    beta, ld, mode, p0, p1, grid_h, grid_logr, radius)
        k3rx, k3ry, k3rz = hvx, hvy, hvz

        hrx = rx + dt * k3rx
        hry = ry + dt * k3ry
        hrz = rz + dt * k3rz
        hvx = vx + dt * a3x
        hvy = vy + dt * a3y
        hvz = vz + dt * a3z
        a4x, a4y, a4z = _cart_accel(hrx, hry, hrz, hvx, hvy, hvz, sigma, mu, omega,
                                    beta, ld, mode, p0, p1, grid_h, grid_logr, radius)
        k4rx, k4ry, k4rz = hvx, hvy, hvz

        sixth = dt / 6.0
        rx += sixth * (k1rx + 2.0 * k2rx + 2.0 * k3rx + k4rx)
        ry += sixth * (k1ry + 2.0 * k2ry + 2.0 * k3ry + k4ry)
        rz += sixth * (k1rz + 2.0 * k2rz + 2.0 * k3rz + k4rz)
        vx += sixth * (a1x + 2.0 * a2x + 2.0 * a3x + a4x)
        vy += sixth * (a1y + 2.0 * a2y + 2.0 * a3y + a4y)
        vz += sixth * (a1z + 2.0 * a2z + 2.0 * a3z + a4z)
        t += dt

        rn = math.sqrt(rx * rx + ry * ry + rz * rz)
        vsq = vx * vx + vy * vy + vz * vz
        e_new = radius / rn - vsq / g0r2
        if e_new >= e_final:
            frac = (e_final - e_prev) / (e_new - e_prev)
            rx = prx + frac * (rx - prx)
            ry = pry + frac * (ry - pry)
            rz = prz + frac * (rz - prz)
            vx = pvx + frac * (vx - pvx)
            vy = pvy + frac * (vy - pvy)
            vz = pvz + frac * (vz - pvz)
            t = t - dt + frac * dt
            return rx, ry, rz, vx, vy, vz, k + 1, 1, t
        e_prev = e_new
    return rx, ry, rz, vx, vy, vz, nsteps, 0, t


@njit(cache=True)
def _lon_rhs(r, v, gam, s, e, e0, ef, sigma0, sigma_f, mode, p0, p1,
             grid_h, grid_logr, scale_l, scale_d, ld, beta, radius,
             omega_nd, s_start, p0z, t0z, nz):
    """Non-dimensional longitudinal derivatives with energy as the
    independent variable.

    Planet-rotation terms are evaluated along the great circle toward the
    target: at arc progress x = s_start - s the path point/tangent
    z-components are Pz, Tz and the plane normal z-component nz is constant,
    giving cos(phi)sin(psi) = nz, sin(phi) = Pz, cos(psi)cos(phi)... all
    pole-safe. The energy rate becomes de/dtau = V~ (D~ - C) with C the
    centrifugal term in the velocity equation, so the change of variables
    stays exact.
    """
    h_km = (r - 1.0) * radius / 1000.0
    rho = density_eval(h_km, mode, p0, p1, grid_h, grid_logr)
    d_base = rho * v * v * radius / (2.0 * beta)
    d = scale_d * d_base
    if d <= 0.0:
        return PREDICT_NONPOSITIVE_DRAG, 0.0, 0.0, 0.0, 0.0
    lift = scale_l * ld * d_base
    sig = sigma0 + (e - e0) / (ef - e0) * (sigma_f - sigma0)
    sg = math.sin(gam)
    cg = math.cos(gam)
    r2 = r * r

    x = s_start - s
    cx = math.cos(x)
    sx = math.sin(x)
    pz = p0z * cx + t0z * sx  # sin(latitude) along the path
    tz = -p0z * sx + t0z * cx
    cp2 = 1.0 - pz * pz  # cos^2(latitude)
    om2r = omega_nd * omega_nd * r
    cterm = om2r * (sg * cp2 - cg * pz * tz)
    deff = d - cterm
    if deff <= 0.0:
        return PREDICT_NONPOSITIVE_DRAG, 0.0, 0.0, 0.0, 0.0

    vnum = -d - sg / r2 + cterm
    gnum = (lift * math.cos(sig) - cg / r2 + v * v * cg / r
            + 2.0 * omega_nd * v * nz + om2r * (cg * cp2 + sg * tz * pz))
    drde = sg / deff
    dvde = vnum / (v * deff)
    dgde = gnum / (v * v * deff)
    dsde = -cg / (r * deff)
    return PREDICT_OK, drde, dvde, dgde, dsde


@njit(cache=True)
def predict_range_kernel(r0, v0, gamma0, s0, e0, ef, sigma0, sigma_f, nsteps,
                         mode, p0, p1, grid_h, grid_logr,
                         scale_l, scale_d, ld, beta, radius,
                         omega_nd, p0z, t0z, nz):
    """Integrate the longitudinal dynamics from e0 to ef with the linear
    bank-magnitude profile; returns (range at ef, failure code)."""
    de = (ef - e0) / nsteps
    r = r0
    v = v0
    gam = gamma0
    s = s0
    for k in range(nsteps):
        e = e0 + k * de
        em = e + 0.5 * de
        ee = e + de

        ok, k1r, k1v, k1g, k1s = _lon_rhs(r, v, gam, s, e, e0, ef, sigma0, sigma_f,
                                          mode, p0, p1, grid_h, grid_logr,
                                          scale_l, scale_d, ld, beta, radius,
                                          omega_nd, s0, p0z, t0z, nz)
        if ok != PREDICT_OK:
            return 0.0, ok
        ok, k2r, k2v, k2g, k2s = _lon_rhs(r + 0.5 * de * k1r, v + 0.5 * de * k1v,
                                          gam + 0.5 * de * k1g, s + 0.5 * de * k1s,
                                          em, e0, ef,
                                          sigma0, sigma_f, mode, p0, p1, grid_h,
                                          grid_logr, scale_l, scale_d, ld, beta, radius,
                                          omega_nd, s0, p0z, t0z, nz)
        if ok != PREDICT_OK:
            return 0.0, ok
        ok, k3r, k3v, k3g, k3s = _lon_rhs(r + 0.5 * de * k2r, v + 0.5 * de * k2v,
                                          gam + 0.5 * de * k2g, s + 0.5 * de * k2s,
                                          em, e0, ef,
                                          sigma0, sigma_f, mode, p0, p1, grid_h,
                                          grid_logr, scale_l, scale_d, ld, beta, radius,
                                          omega_nd, s0, p0z, t0z, nz)
        if ok != PREDICT_OK:
            return 0.0, ok
        ok, k4r, k4v, k4g, k4s = _lon_rhs(r + de * k3r, v + de * k3v,
                                          gam + de * k3g, s + de * k3s,
                                          ee, e0, ef,
                                          sigma0, sigma_f, mode, p0, p1, grid_h,
                                          grid_logr, scale_l, scale_d, ld, beta, radius,
                                          omega_nd, s0, p0z, t0z, nz)
        if ok != PREDICT_OK:
            return 0.0, ok

        r += de / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
        v += de / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        gam += de / 6.0 * (k1g + 2.0 * k2g + 2.0 * k3g + k4g)
        s += de / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)

        if not (math.isfinite(r) and math.isfinite(v) and math.isfinite(gam)
                and math.isfinite(s) and r > 0.0 and v > 0.0):
            return 0.0, PREDICT_NONFINITE
    return s, PREDICT_OK


def warm_up():
    """Trigger JIT compilation of all kernels (cached on disk afterwards)."""
    grid = np.array([0.0, 130.0])
    logr = np.array([-1.58, -7.0])
    density_eval(10.0, DENS_EXPONENTIAL, 2.63e-2, 10.15, EMPTY_GRID, EMPTY_GRID)
    density_eval(10.0, DENS_GRID, 0.0, 0.0, grid, logr)
    propagate_entry(3.5e6, 0.0, 0.0, 0.0, 4000.0, 0.0, 0.0, 0.1, 1,
                    4.305e13, 7e-5, 155.0, 0.15, DENS_EXPONENTIAL, 2.63e-2,
                    10.15, EMPTY_GRID, EMPTY_GRID, 3.3962e6, 3.73, 10.0)
    predict_range_kernel(1.02, 1.0, -0.1, 0.1, 0.4, 0.9, 0.5, 1.2, 4,
                         DENS_EXPONENTIAL, 2.63e-2, 10.15, EMPTY_GRID,
                         EMPTY_GRID, 1.0, 1.0, 0.15, 155.0, 3.3962e6,
                         0.0677, 0.7, 0.3, 0.5)

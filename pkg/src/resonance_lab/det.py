"""Deterministic slow-fast dynamics eps * dx/dt = f(x, t) and linearized profiles.

The solver is a classical fixed-step 4th-order one-step method with
dt = eps / steps_per_eps.  Explicit stability needs dt*|df/dx|/eps <~ 1 and
|df/dx| stays below ~6 on the simulation box, so the default of 100 steps per
eps leaves ample margin while keeping trajectories bit-reproducible.

The regularized variance profile zeta and the linearized variance v are
computed from their defining linear ODEs

    eps * zeta' = 2*abar(t)*zeta + 1,      zeta(t0) = 1 / (2*|abar(t0)|)
    eps * v'    = 2*abar(t)*v + sigma**2,  v(t0)    = 0

rather than from the equivalent exponential-integral forms, which avoids
overflowing exp(2*alphabar/eps) and is O(n) on the trajectory grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, TextIO

import numpy as np
from scipy.integrate import quad, solve_ivp


class DivergedError(RuntimeError):
    """Raised when a solution leaves the domain box in finite time."""

    def __init__(self, message: str, exit_time: float):
        super().__init__(message)
        self.exit_time = exit_time


class AmbiguousCrossingError(RuntimeError):
    """More than one crossing found where the theory promises exactly one."""

    def __init__(self, times: list[float]):
        super().__init__(f"multiple crossings at t = {times}")
        self.times = times


@dataclass(frozen=True)
class Trajectory:
    """Fixed-grid solution sample with its linearization along the path.

    ``alphabar_cum[k]`` is the trapezoid cumulative integral of ``abar`` from
    ``t0`` to ``t0 + k*dt``; it is recomputable bit-identically via
    ``np.cumsum(0.5 * (abar[:-1] + abar[1:]) * dt)``.
    """

    t0: float
    t1: float
    dt: float
    xs: np.ndarray
    abar: np.ndarray
    alphabar_cum: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.xs) - 1

    @property
    def ts(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.xs))

    def x_at(self, t) -> float | np.ndarray:
        return np.interp(t, self.ts, self.xs)

    def abar_at(self, t) -> float | np.ndarray:
        return np.interp(t, self.ts, self.abar)

    def alphabar(self, t) -> float | np.ndarray:
        """Cumulative integral of abar from t0 to t (grid interpolation)."""
        return np.interp(t, self.ts, self.alphabar_cum)


def _grid_steps(t0: float, t1: float, dt: float) -> int:
    return max(1, int(math.ceil((t1 - t0) / dt - 1e-9)))


def solve_deterministic(
    model,
    x0: float,
    t0: float,
    t1: float,
    eps: float,
    steps_per_eps: int = 100,
    domain: tuple[float, float] | None = None,
) -> Trajectory:
    """Integrate eps * dx/dt = force(x, t) on a fixed grid of dt = eps/steps_per_eps.

    ``model`` needs ``force(x, t)`` and ``linearization(x, t)``.  Raises
    DivergedError if the solution leaves the domain box.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if t1 <= t0:
        raise ValueError("t1 must exceed t0")
    if steps_per_eps < 10:
        raise ValueError("steps_per_eps must be at least 10")
    lo, hi = domain if domain is not None else getattr(model, "x_domain", (-3.0, 3.0))

    dt = eps / steps_per_eps
    n = _grid_steps(t0, t1, dt)
    xs = np.empty(n + 1)
    xs[0] = x0
    x = float(x0)
    half = 0.5 * dt
    for k in range(n):
        t = t0 + k * dt
        k1 = model.force(x, t) / eps
        k2 = model.force(x + half * k1, t + half) / eps
        k3 = model.force(x + half * k2, t + half) / eps
        k4 = model.force(x + dt * k3, t + dt) / eps
        x = x + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if not (lo <= x <= hi) or not math.isfinite(x):
            raise DivergedError(f"solution left [{lo}, {hi}] at t = {t + dt:.6g}", t + dt)
        xs[k + 1] = x

    ts = t0 + dt * np.arange(n + 1)
    abar = np.asarray(model.linearization(xs, ts), dtype=float)
    alphabar_cum = np.concatenate(([0.0], np.cumsum(0.5 * (abar[:-1] + abar[1:]) * dt)))
    return Trajectory(t0=t0, t1=t0 + n * dt, dt=dt, xs=xs, abar=abar, alphabar_cum=alphabar_cum)


def default_trajectory(spec, eps: float, steps_per_eps: int = 100, T: float | None = None) -> Trajectory:
    """Deterministic reference path on [-T, T], started at x*_+(-T) + eps."""
    if T is None:
        T = spec.default_window_T
    x0 = float(spec.well_positive(-T)) + eps
    return solve_deterministic(spec, x0, -T, T, eps, steps_per_eps)


def crossing_time(traj: Trajectory, branch: Callable[[float], float]) -> float | None:
    """The unique time where the trajectory crosses ``branch``, or None.

    Sign changes are located on the grid and refined by bisection of the
    linearly interpolated difference down to dt/100.  More than one sign
    change reports an AmbiguousCrossingError rather than guessing.
    """
    ts = traj.ts
    try:
        bvals = np.asarray(branch(ts), dtype=float)
        if bvals.shape != ts.shape:
            raise TypeError
    except Exception:
        bvals = np.array([float(branch(t)) for t in ts])
    d = traj.xs - bvals
    sign = np.sign(d)
    hits = list(np.nonzero(sign[:-1] * sign[1:] < 0)[0])
    exact = list(np.nonzero(d == 0.0)[0])
    if len(hits) + len(exact) == 0:
        return None
    if len(hits) + len(exact) > 1:
        times = sorted([traj.ts[k] for k in exact] + [traj.ts[k] for k in hits])
        raise AmbiguousCrossingError([float(t) for t in times])
    if exact:
        return float(ts[exact[0]])
    k = hits[0]
    lo_t, hi_t = float(ts[k]), float(ts[k + 1])
    x_lo, x_hi = float(traj.xs[k]), float(traj.xs[k + 1])

    def g(t):
        x = x_lo + (x_hi - x_lo) * (t - lo_t) / (hi_t - lo_t)
        return x - float(branch(t))

    g_lo = g(lo_t)
    while hi_t - lo_t > traj.dt / 100.0:
        mid = 0.5 * (lo_t + hi_t)
        g_mid = g(mid)
        if g_mid == 0.0:
            return mid
        if g_lo * g_mid < 0.0:
            hi_t = mid
        else:
            lo_t, g_lo = mid, g_mid
    return 0.5 * (lo_t + hi_t)


def _linear_profile(traj: Trajectory, eps: float, source: float, u0: float) -> np.ndarray:
    """Solve eps*u' = 2*abar(t)*u + source on the trajectory grid (RK4).

    abar is interpolated linearly at half-steps; the stored values then
    satisfy the ODE to well below the central-difference truncation of the
    exact solution on the same grid.
    """
    ab = traj.abar
    dt = traj.dt
    n = traj.n_steps
    us = np.empty(n + 1)
    us[0] = u0
    u = u0
    c = 2.0 / eps
    s = source / eps
    for k in range(n):
        a0 = ab[k]
        am = 0.5 * (ab[k] + ab[k + 1])
        a1 = ab[k + 1]
        k1 = c * a0 * u + s
        k2 = c * am * (u + 0.5 * dt * k1) + s
        k3 = c * am * (u + 0.5 * dt * k2) + s
        k4 = c * a1 * (u + dt * k3) + s
        u = u + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        us[k + 1] = u
    return us


def zeta_profile(traj: Trajectory, eps: float) -> np.ndarray:
    """Regularized variance profile on the trajectory grid; strictly positive."""
    a_start = traj.abar[0]
    if a_start >= 0.0:
        raise ValueError("zeta needs a stable start: abar(t0) < 0")
    return _linear_profile(traj, eps, 1.0, 1.0 / (2.0 * abs(a_start)))


def zeta(traj: Trajectory, t: float, eps: float) -> float:
    if not (traj.t0 <= t <= traj.t1):
        raise ValueError(f"t = {t} outside trajectory window [{traj.t0}, {traj.t1}]")
    return float(np.interp(t, traj.ts, zeta_profile(traj, eps)))


def variance_profile(traj: Trajectory, sigma: float, eps: float) -> np.ndarray:
    """Linearized variance v(t) on the grid: eps*v' = 2*abar*v + sigma^2, v(t0) = 0."""
    return _linear_profile(traj, eps, sigma**2, 0.0)


def linearized_variance(traj: Trajectory, t: float, sigma: float, eps: float) -> float:
    if not (traj.t0 <= t <= traj.t1):
        raise ValueError(f"t = {t} outside trajectory window [{traj.t0}, {traj.t1}]")
    return float(np.interp(t, traj.ts, variance_profile(traj, sigma, eps)))


def tracking_lag(traj: Trajectory, branch: Callable[[float], float], t: float) -> float:
    """Signed distance x(t) - branch(t)."""
    if not (traj.t0 <= t <= traj.t1):
        raise ValueError(f"t = {t} outside trajectory window [{traj.t0}, {traj.t1}]")
    return float(traj.x_at(t)) - float(branch(t))


# -- rescaled closed-form / high-accuracy oracles ----------------------------


def bernoulli_oracle(z0: float, s0: float, s: float, a0_tilde: float) -> float:
    """Exact solution of dz/ds = (a0_tilde + s^2) z - z^3 with z(s0) = z0 > 0.

    Evaluated in the overflow-safe form
        z_s = z0 / sqrt(exp(-2*A(s,s0)) + 2*z0^2 * int_{s0}^{s} exp(-2*A(s,u)) du),
    A(s,u) = a0_tilde*(s-u) + (s^3-u^3)/3, with the integral done by adaptive
    quadrature to 1e-10.
    """
    if z0 <= 0.0:
        raise ValueError("z0 must be positive")
    if s < s0:
        raise ValueError("s must be >= s0")
    if s == s0:
        return z0

    def alpha(b, a):
        return a0_tilde * (b - a) + (b**3 - a**3) / 3.0

    integral, _ = quad(lambda u: math.exp(-2.0 * alpha(s, u)), s0, s, epsabs=1e-12, epsrel=1e-12, limit=400)
    damp = math.exp(-2.0 * alpha(s, s0))
    return z0 / math.sqrt(damp + 2.0 * z0**2 * integral)


def riccati_oracle(z0: float, s0: float, s: float, a0_tilde: float) -> float:
    """High-accuracy adaptive integration of dz/ds = a0_tilde + s^2 - z^2.

    Solutions below the repelling branch blow up to -inf in finite time; that
    is reported as DivergedError carrying the (approximate) blow-up time.
    """
    blow = -1e6

    def rhs(u, z):
        return a0_tilde + u**2 - z[0] ** 2

    def hit_blowup(u, z):
        return z[0] - blow

    hit_blowup.terminal = True
    hit_blowup.direction = -1

    sol = solve_ivp(
        rhs,
        (s0, s),
        [float(z0)],
        method="DOP853",
        rtol=1e-10,
        atol=1e-12,
        events=hit_blowup,
        dense_output=False,
    )
    if sol.t_events[0].size > 0:
        t_blow = float(sol.t_events[0][0])
        raise DivergedError(f"Riccati solution blew up near s = {t_blow:.6g}", t_blow)
    if not sol.success:
        raise DivergedError(f"Riccati integration failed: {sol.message}", float(sol.t[-1]))
    return float(sol.y[0, -1])


def write_trajectory_csv(traj: Trajectory, out: TextIO) -> None:
    """Dump the grid as CSV: t,x,abar,alphabar_cum with %.17g formatting."""
    out.write("t,x,abar,alphabar_cum\n")
    ts = traj.ts
    for k in range(len(ts)):
        out.write(
            f"{ts[k]:.17g},{traj.xs[k]:.17g},{traj.abar[k]:.17g},{traj.alphabar_cum[k]:.17g}\n"
        )

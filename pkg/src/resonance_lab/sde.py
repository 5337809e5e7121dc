"""Sample-path generation for dx = (1/eps) f(x,t) dt + (sigma/sqrt(eps)) dW.

Paths use Euler-Maruyama with the fixed step dt = eps/steps_per_eps (additive
noise, so this is also Milstein and strong order 1.0).  Noise comes from
counter-based Philox streams keyed by (master_seed, path_index), which makes
every path a pure function of its key: paths can be regenerated in isolation
and ensemble results do not depend on worker count or execution order.

A path that leaves the domain guard is frozen at its exit value and flagged;
escape is data, not failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from .det import Trajectory, _grid_steps, variance_profile, zeta_profile
from .model import Family

_MASK64 = (1 << 64) - 1

# path-block and noise-block sizes are fixed so partitioning never depends on
# worker count
BLOCK_PATHS = 512
NOISE_BLOCK_STEPS = 4096


@dataclass(frozen=True)
class SimParams:
    """Simulation knobs shared by single paths and ensembles."""

    eps: float
    sigma: float
    t0: float
    t1: float
    steps_per_eps: int = 100
    master_seed: int = 42
    domain_guard: float = 3.0
    x0: float | None = None  # None -> start at the right well + eps

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.sigma < 0.0:
            raise ValueError("sigma must be nonnegative")
        if self.t1 <= self.t0:
            raise ValueError("t1 must exceed t0")
        if self.steps_per_eps < 10:
            raise ValueError("steps_per_eps must be at least 10")
        if self.domain_guard <= 0.0:
            raise ValueError("domain_guard must be positive")

    @property
    def dt(self) -> float:
        return self.eps / self.steps_per_eps

    @property
    def n_steps(self) -> int:
        return _grid_steps(self.t0, self.t1, self.dt)


@dataclass(frozen=True)
class NoiseStream:
    """Counter-based noise source for one path.

    The k-th standard-normal increment is a pure function of
    (master_seed, path_index, k): independent of thread scheduling and of how
    many other paths exist.
    """

    master_seed: int
    path_index: int

    def __post_init__(self):
        if self.path_index < 0:
            raise ValueError("path_index must be >= 0")

    def generator(self) -> np.random.Generator:
        key = ((self.master_seed & _MASK64) << 64) | (self.path_index & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SpaceTimeSet:
    """Set {(x,t): t_lo <= t <= t_hi, lower(t) < x < upper(t)}.

    Boundary functions may return +-inf.
    """

    t_lo: float
    t_hi: float
    lower: Callable[[float], float]
    upper: Callable[[float], float]

    def contains(self, x: float, t: float) -> bool:
        if not (self.t_lo <= t <= self.t_hi):
            return False
        return self.lower(t) < x < self.upper(t)

    def boundary_values(self, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lo = _eval_boundary(self.lower, ts)
        hi = _eval_boundary(self.upper, ts)
        return lo, hi


def _eval_boundary(fn: Callable, ts: np.ndarray) -> np.ndarray:
    try:
        vals = np.asarray(fn(ts), dtype=float)
        if vals.shape != np.shape(ts):
            raise TypeError
        return vals
    except Exception:
        return np.array([float(fn(t)) for t in np.atleast_1d(ts)])


@dataclass(frozen=True)
class SamplePath:
    t0: float
    dt: float
    xs: np.ndarray
    escaped_domain: bool = False
    escape_time: float | None = None

    @property
    def t1(self) -> float:
        return self.t0 + self.dt * (len(self.xs) - 1)

    @property
    def ts(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.xs))

    def x_at(self, t) -> float | np.ndarray:
        return np.interp(t, self.ts, self.xs)


@dataclass
class PathStats:
    """Streaming per-path statistics from one ensemble evolution."""

    final_x: np.ndarray
    min_x: np.ndarray
    escaped: np.ndarray
    escape_time: np.ndarray  # nan when not escaped
    level_hit_times: list[np.ndarray] = field(default_factory=list)  # nan when never hit
    set_exit_times: np.ndarray | None = None  # nan when never exits
    paths: np.ndarray | None = None  # (n_paths, n_steps+1) when kept


def evolve_paths(
    model,
    params: SimParams,
    x0,
    streams: Sequence[NoiseStream],
    *,
    levels: Sequence[np.ndarray] | None = None,
    exit_set: tuple[np.ndarray, np.ndarray, int, int] | None = None,
    keep_paths: bool = False,
) -> PathStats:
    """Advance all paths of one block simultaneously, streaming statistics.

    levels: grid-sampled threshold curves; records the first time x drops to
        or below each curve (paths are assumed to start above).
    exit_set: (lower_vals, upper_vals, k_lo, k_hi) grid-sampled set boundary;
        records the first grid time in [k_lo, k_hi] with x outside
        (lower, upper), linearly interpolated between the bracketing samples.
    """
    n_paths = len(streams)
    n = params.n_steps
    dt = params.dt
    eps = params.eps
    t0 = params.t0
    guard = params.domain_guard
    amp = params.sigma * math.sqrt(dt / eps)

    x = np.full(n_paths, float(x0)) if np.isscalar(x0) else np.asarray(x0, dtype=float).copy()
    alive = np.ones(n_paths, dtype=bool)
    any_frozen = False
    escape_time = np.full(n_paths, np.nan)
    min_x = x.copy()

    n_levels = len(levels) if levels else 0
    level_hits = [np.full(n_paths, np.nan) for _ in range(n_levels)]
    pending = [np.ones(n_paths, dtype=bool) for _ in range(n_levels)]
    n_pending = [n_paths] * n_levels
    if levels:
        for i, lv in enumerate(levels):
            below0 = x <= lv[0]
            if below0.any():
                level_hits[i][below0] = t0
                pending[i] &= ~below0
                n_pending[i] -= int(below0.sum())

    exit_times = None
    prev_margin = None
    if exit_set is not None:
        lo_vals, hi_vals, k_lo, k_hi = exit_set
        exit_times = np.full(n_paths, np.nan)
        if k_lo == 0:
            margin0 = np.minimum(x - lo_vals[0], hi_vals[0] - x)
            out0 = margin0 <= 0.0
            exit_times[out0] = t0
            prev_margin = margin0

    paths = None
    if keep_paths:
        paths = np.empty((n_paths, n + 1))
        paths[:, 0] = x

    gens = [s.generator() for s in streams]
    dt_over_eps = dt / eps

    k = 0
    while k < n:
        b = min(NOISE_BLOCK_STEPS, n - k)
        noise = np.empty((n_paths, b))
        for i, g in enumerate(gens):
            noise[i] = g.standard_normal(b)
        noise *= amp
        noise = np.ascontiguousarray(noise.T)
        for j in range(b):
            kk = k + j
            t = t0 + kk * dt
            t_next = t0 + (kk + 1) * dt
            # multiply first: the product is a fresh array even if force()
            # returned one of its inputs
            drift = model.force(x, t) * dt_over_eps
            drift += noise[j]
            if any_frozen:
                x = np.where(alive, x + drift, x)
            else:
                x += drift
            bad = np.abs(x) > guard
            if bad.any():
                newly = bad & alive
                if newly.any():
                    escape_time[newly] = t_next
                    alive &= ~newly
                    any_frozen = True
            np.minimum(min_x, x, out=min_x)
            for i in range(n_levels):
                if n_pending[i] == 0:
                    continue
                hits = pending[i] & (x <= levels[i][kk + 1])
                if hits.any():
                    level_hits[i][hits] = t_next
                    pending[i] &= ~hits
                    n_pending[i] -= int(hits.sum())
            if exit_set is not None and k_lo <= kk + 1 <= k_hi:
                margin = np.minimum(x - lo_vals[kk + 1], hi_vals[kk + 1] - x)
                fresh = np.isnan(exit_times) & (margin <= 0.0)
                if fresh.any():
                    if prev_margin is None or kk + 1 == k_lo:
                        exit_times[fresh] = t_next
                    else:
                        gap = prev_margin[fresh] - margin[fresh]
                        frac = np.where(gap > 0.0, prev_margin[fresh] / np.where(gap > 0.0, gap, 1.0), 1.0)
                        exit_times[fresh] = t + dt * np.clip(frac, 0.0, 1.0)
                prev_margin = margin
            if keep_paths:
                paths[:, kk + 1] = x
        k += b

    return PathStats(
        final_x=x,
        min_x=min_x,
        escaped=~alive,
        escape_time=escape_time,
        level_hit_times=level_hits,
        set_exit_times=exit_times,
        paths=paths,
    )


def resolve_x0(model, params: SimParams) -> float:
    """params.x0, or the family default start x*_+(t0) + eps."""
    if params.x0 is not None:
        return float(params.x0)
    if hasattr(model, "well_positive"):
        return float(model.well_positive(params.t0)) + params.eps
    raise ValueError("params.x0 must be given for models without well_positive")


def sample_path(model, params: SimParams, stream: NoiseStream) -> SamplePath:
    """One Euler-Maruyama path on the fixed grid; bit-reproducible per stream."""
    x0 = resolve_x0(model, params)
    stats = evolve_paths(model, params, x0, [stream], keep_paths=True)
    escaped = bool(stats.escaped[0])
    return SamplePath(
        t0=params.t0,
        dt=params.dt,
        xs=stats.paths[0],
        escaped_domain=escaped,
        escape_time=float(stats.escape_time[0]) if escaped else None,
    )


def exact_ou_sample(
    traj: Trajectory, t: float, sigma: float, eps: float, stream: NoiseStream, n: int = 1
):
    """Exact draws of the linearized process at time t: N(0, v(t)).

    Used as a distributional oracle against the Euler-Maruyama paths.
    """
    v = float(np.interp(t, traj.ts, variance_profile(traj, sigma, eps)))
    draws = stream.generator().standard_normal(n) * math.sqrt(max(v, 0.0))
    return float(draws[0]) if n == 1 else draws


def first_exit(path: SamplePath, sts: SpaceTimeSet) -> float | None:
    """First time (x_t, t) leaves the set, or None (exit never observed).

    The smallest grid time outside the set, refined by linear interpolation
    of the boundary margin between the bracketing samples.  No bridge
    correction is applied, so exit times carry the usual O(sqrt(dt))
    discretization bias; at the default resolution that bias sits far below
    the transition-window widths being measured.
    """
    ts = path.ts
    inside_window = (ts >= sts.t_lo - 1e-12) & (ts <= sts.t_hi + 1e-12)
    if not inside_window.any():
        return None
    idx = np.nonzero(inside_window)[0]
    sub_ts = ts[idx]
    lo, hi = sts.boundary_values(sub_ts)
    margin = np.minimum(path.xs[idx] - lo, hi - path.xs[idx])
    out = np.nonzero(margin <= 0.0)[0]
    if out.size == 0:
        return None
    j = int(out[0])
    if j == 0:
        return float(sub_ts[0])
    gap = margin[j - 1] - margin[j]
    frac = margin[j - 1] / gap if gap > 0.0 else 1.0
    return float(sub_ts[j - 1] + (sub_ts[j] - sub_ts[j - 1]) * min(max(frac, 0.0), 1.0))


def band_B(traj: Trajectory, h: float, eps: float) -> SpaceTimeSet:
    """Moving band of half-width h*sqrt(zeta(t)) around the deterministic path."""
    if h <= 0.0:
        raise ValueError("band width h must be positive")
    zp = zeta_profile(traj, eps)
    half = h * np.sqrt(zp)
    ts = traj.ts
    lo_vals = traj.xs - half
    hi_vals = traj.xs + half
    return SpaceTimeSet(
        t_lo=traj.t0,
        t_hi=traj.t1,
        lower=lambda t: np.interp(t, ts, lo_vals),
        upper=lambda t: np.interp(t, ts, hi_vals),
    )


def region_D(
    spec,
    kappa: float,
    t_start: float,
    t_stop: float = math.inf,
    delta: float = 1.0,
) -> SpaceTimeSet:
    """Shrinking saddle neighbourhood {f(x,t)/x > kappa*a(t)} (symmetric family).

    For f = a(t)x - x^3 the positive boundary is x~(t) = sqrt((1-kappa) a(t)),
    clipped to |x| <= delta.
    """
    if spec.family is not Family.SYMMETRIC:
        raise ValueError("region_D is defined for the symmetric family")
    if not (0.0 < kappa < 1.0):
        raise ValueError("kappa must lie in (0, 1)")

    def x_tilde(t):
        return np.minimum(np.sqrt((1.0 - kappa) * spec.drive_a(t)), delta)

    return SpaceTimeSet(
        t_lo=t_start,
        t_hi=t_stop,
        lower=lambda t: -x_tilde(t),
        upper=x_tilde,
    )


def coupled_evolve(
    spec,
    traj: Trajectory,
    sigma: float,
    eps: float,
    streams: Sequence[NoiseStream],
    y0: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Nonlinear paths from x_det(t0)+y0 and linearized offsets y0_t, same noise.

    Both are stepped with Euler-Maruyama on the trajectory grid; the linear
    process uses the stored linearization abar(t).  Returns matrices of shape
    (n_streams, n_steps+1).
    """
    n = traj.n_steps
    dt = traj.dt
    R = len(streams)
    amp = sigma * math.sqrt(dt / eps)
    X = np.empty((R, n + 1))
    Y = np.empty((R, n + 1))
    X[:, 0] = traj.xs[0] + y0
    Y[:, 0] = y0
    x = X[:, 0].copy()
    y = Y[:, 0].copy()
    gens = [s.generator() for s in streams]
    k = 0
    while k < n:
        b = min(NOISE_BLOCK_STEPS, n - k)
        noise = np.empty((R, b))
        for i, g in enumerate(gens):
            noise[i] = g.standard_normal(b)
        for j in range(b):
            kk = k + j
            t = traj.t0 + kk * dt
            dW = amp * noise[:, j]
            x = x + (dt / eps) * spec.force(x, t) + dW
            y = y + (dt / eps) * traj.abar[kk] * y + dW
            X[:, kk + 1] = x
            Y[:, kk + 1] = y
        k += b
    return X, Y


def coupled_pair(
    spec, traj: Trajectory, params: SimParams, stream: NoiseStream, y0: float, delta: float = 2.0
) -> tuple[SamplePath, SamplePath]:
    """One nonlinear/linearized pair driven by identical noise increments.

    For this cubic force x * d2f/dx2 <= 0 holds everywhere, so the comparison
    gate level delta may be chosen freely; the default 2.0 keeps the whole
    default trajectory (max |x_det| ~ 1.42) inside [0, delta].
    """
    if spec.family is not Family.SYMMETRIC:
        raise ValueError("coupled_pair is defined for the symmetric family")
    if not (0.0 <= y0 <= delta - traj.xs[0]):
        raise ValueError(f"y0 must lie in [0, delta - x_det(t0)] = [0, {delta - traj.xs[0]:.6g}]")
    X, Y = coupled_evolve(spec, traj, params.sigma, params.eps, [stream], y0)
    nonlinear = SamplePath(t0=traj.t0, dt=traj.dt, xs=X[0])
    linearized = SamplePath(t0=traj.t0, dt=traj.dt, xs=Y[0])
    return nonlinear, linearized


def crossing_events(path: SamplePath, level: Callable[[float], float]) -> list[float]:
    """All interpolated times where x_t - level(t) changes sign."""
    ts = path.ts
    lv = _eval_boundary(level, ts)
    d = path.xs - lv
    events: list[float] = []
    sign = np.sign(d)
    for k in np.nonzero(d == 0.0)[0]:
        events.append(float(ts[k]))
    for k in np.nonzero(sign[:-1] * sign[1:] < 0)[0]:
        frac = d[k] / (d[k] - d[k + 1])
        events.append(float(ts[k] + path.dt * frac))
    return sorted(events)


def write_paths_csv(paths: Sequence[SamplePath], out: TextIO, escapes_out: TextIO | None = None) -> None:
    """Dump paths as CSV `path_id,t,x`; escape events go to the sidecar."""
    out.write("path_id,t,x\n")
    for pid, p in enumerate(paths):
        ts = p.ts
        for k in range(len(ts)):
            out.write(f"{pid},{ts[k]:.17g},{p.xs[k]:.17g}\n")
    if escapes_out is not None:
        escapes_out.write("path_id,escape_time\n")
        for pid, p in enumerate(paths):
            if p.escaped_domain:
                escapes_out.write(f"{pid},{p.escape_time:.17g}\n")

"""Ensemble experiments: transition probabilities, window statistics, escape
curves, critical-noise scans, and power-law fits.

Reproducibility contract: every result is a pure function of
(master_seed, n_paths, config).  Paths are partitioned into fixed-size blocks
by index, blocks may run on a thread pool (capped by RESONANCE_THREADS), and
all floating-point reductions happen in canonical path-index order after the
blocks return, so worker count never changes a single output bit.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .det import default_trajectory
from .model import Family, ModelSpec
from .sde import (
    BLOCK_PATHS,
    NoiseStream,
    PathStats,
    SimParams,
    evolve_paths,
    region_D,
    resolve_x0,
)

WILSON_Z = 1.96

# asymmetric level set (delta0, delta1, delta2); delta2 is capped by the
# domain guard, the cubic would allow it arbitrarily large
DELTA_LEVELS = (-0.5, 0.2, 3.0)


class InsufficientDataError(RuntimeError):
    """Too few qualifying paths to form the requested statistic."""


class BracketError(ValueError):
    """A scan bracket that does not straddle the target probability."""


class TransitionConvention(enum.Enum):
    """What counts as an interwell transition for one path.

    SIGN_AT_PERIOD_END: x < 0 at the window end, starting from the + well
        (symmetric; by symmetry this probability can never exceed 1/2).
    CROSSED_SADDLE: the path touched the unstable branch at least once
        (reached the boundary of the other well's basin).
    REACHED_DELTA0: inf_t x_t <= delta0 (asymmetric; the path descended to a
        level inside the left well's basin).
    """

    SIGN_AT_PERIOD_END = "sign_at_period_end"
    CROSSED_SADDLE = "crossed_saddle"
    REACHED_DELTA0 = "reached_delta0"


def default_convention(spec: ModelSpec) -> TransitionConvention:
    if spec.family is Family.SYMMETRIC:
        return TransitionConvention.SIGN_AT_PERIOD_END
    return TransitionConvention.REACHED_DELTA0


@dataclass(frozen=True)
class EnsembleSummary:
    n_paths: int
    n_transitions: int
    n_escaped_domain: int
    p_hat: float
    ci_lo: float
    ci_hi: float
    crossing_quantiles: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.p_hat <= 1.0):
            raise ValueError("p_hat outside [0, 1]")
        if not (self.ci_lo <= self.p_hat <= self.ci_hi):
            raise ValueError("Wilson interval does not cover p_hat")
        if min(self.n_paths, self.n_transitions, self.n_escaped_domain) < 0:
            raise ValueError("counts must be nonnegative")
        if self.n_transitions + self.n_escaped_domain > self.n_paths:
            raise ValueError("transition and escape counts exceed the ensemble size")


@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    stderr_slope: float
    r_squared: float
    points: list

    def __post_init__(self):
        if len(self.points) < 3:
            raise ValueError("power-law fit needs at least 3 points")
        if self.stderr_slope < 0.0:
            raise ValueError("stderr_slope must be nonnegative")


@dataclass(frozen=True)
class ThresholdScanResult:
    sigma_c: float
    bracket_lo: float
    bracket_hi: float
    evaluations: list  # (sigma, p_hat, ci_lo, ci_hi)


def wilson_interval(successes: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    """95% Wilson score interval; valid near 0 and 1 where the regimes live."""
    if n <= 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z**2 / n
    center = (p + z**2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / denom
    # rounding must not push the point estimate outside its own interval
    lo = min(max(0.0, center - half), p)
    hi = max(min(1.0, center + half), p)
    return lo, hi


def _worker_count() -> int:
    env = os.environ.get("RESONANCE_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def _run_blocks(model, params: SimParams, n_paths: int, **kernel_kw) -> PathStats:
    """Evolve n_paths split into fixed index blocks, then stitch in order."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    x0 = kernel_kw.pop("x0", None)
    if x0 is None:
        x0 = resolve_x0(model, params)
    blocks = [(b, min(b + BLOCK_PATHS, n_paths)) for b in range(0, n_paths, BLOCK_PATHS)]

    def run(block):
        lo, hi = block
        streams = [NoiseStream(params.master_seed, i) for i in range(lo, hi)]
        return evolve_paths(model, params, x0, streams, **kernel_kw)

    if len(blocks) == 1 or _worker_count() == 1:
        results = [run(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
            results = list(pool.map(run, blocks))

    def cat(attr):
        vals = [getattr(r, attr) for r in results]
        return np.concatenate(vals) if vals[0] is not None else None

    n_levels = len(results[0].level_hit_times)
    return PathStats(
        final_x=cat("final_x"),
        min_x=cat("min_x"),
        escaped=cat("escaped"),
        escape_time=cat("escape_time"),
        level_hit_times=[
            np.concatenate([r.level_hit_times[i] for r in results]) for i in range(n_levels)
        ],
        set_exit_times=cat("set_exit_times"),
        paths=None,
    )


def _grid_times(params: SimParams) -> np.ndarray:
    return params.t0 + params.dt * np.arange(params.n_steps + 1)


def _saddle_level(spec: ModelSpec, params: SimParams) -> np.ndarray:
    return np.asarray(spec.saddle_branch(_grid_times(params)), dtype=float)


def check_delta_levels(spec: ModelSpec, delta0: float, delta1: float, T: float) -> None:
    """Verify numerically that the drift is negative on [delta0, delta1] x [-T, T]."""
    xs = np.linspace(delta0, delta1, 41)
    ts = np.linspace(-T, T, 41)
    worst = max(float(np.max(spec.force(xs, t))) for t in ts)
    if worst >= 0.0:
        raise ValueError(
            f"delta levels invalid: force reaches {worst:.3g} >= 0 on "
            f"[{delta0}, {delta1}] x [-{T}, {T}]"
        )


def _summarize(
    spec: ModelSpec,
    params: SimParams,
    n_paths: int,
    transitions: np.ndarray,
    escaped: np.ndarray,
    convention_label: str,
    extra_meta: dict | None = None,
) -> EnsembleSummary:
    n_escaped = int(escaped.sum())
    n_eff = n_paths - n_escaped
    n_trans = int((transitions & ~escaped).sum())
    p = n_trans / n_eff if n_eff > 0 else 0.0
    lo, hi = wilson_interval(n_trans, n_eff)
    meta = {
        "family": spec.family.value,
        "eps": params.eps,
        "sigma": params.sigma,
        "a0": spec.a0,
        "seed": params.master_seed,
        "convention": convention_label,
    }
    if extra_meta:
        meta.update(extra_meta)
    return EnsembleSummary(
        n_paths=n_paths,
        n_transitions=n_trans,
        n_escaped_domain=n_escaped,
        p_hat=p,
        ci_lo=lo,
        ci_hi=hi,
        metadata=meta,
    )


def estimate_transition_prob(
    spec: ModelSpec,
    params: SimParams,
    n_paths: int,
    convention: TransitionConvention | None = None,
) -> EnsembleSummary:
    """Interwell transition probability with a 95% Wilson interval.

    Escaped-domain paths are excluded from both numerator and denominator and
    reported separately.  The summary metadata always carries the auxiliary
    counts (saddle crossings, negative signs at the end, delta0 reaches) so
    the conventions can be compared on the same ensemble.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if convention is None:
        convention = default_convention(spec)

    levels = [_saddle_level(spec, params)]
    if spec.family is Family.ASYMMETRIC:
        delta0 = DELTA_LEVELS[0]
        check_delta_levels(spec, delta0, DELTA_LEVELS[1], spec.default_window_T)
        levels.append(np.full(params.n_steps + 1, delta0))

    stats = _run_blocks(spec, params, n_paths, levels=levels)
    crossed = ~np.isnan(stats.level_hit_times[0])
    sign_neg = stats.final_x < 0.0
    extra = {
        "n_crossed_saddle": int((crossed & ~stats.escaped).sum()),
        "n_negative_at_end": int((sign_neg & ~stats.escaped).sum()),
    }
    if convention is TransitionConvention.SIGN_AT_PERIOD_END:
        transitions = sign_neg
    elif convention is TransitionConvention.CROSSED_SADDLE:
        transitions = crossed
    else:
        if spec.family is not Family.ASYMMETRIC:
            raise ValueError("REACHED_DELTA0 applies to the asymmetric family")
        reached = ~np.isnan(stats.level_hit_times[1])
        extra["n_reached_delta0"] = int((reached & ~stats.escaped).sum())
        transitions = reached
    summary = _summarize(spec, params, n_paths, transitions, stats.escaped, convention.value, extra)
    good = crossed & ~stats.escaped
    if int(good.sum()) >= 50:
        times = stats.level_hit_times[0][good]
        qs = np.quantile(times, QUANTILES)
        summary = replace(summary, crossing_quantiles={q: float(v) for q, v in zip(QUANTILES, qs)})
    return summary


def run_ensemble(
    spec: ModelSpec,
    params: SimParams,
    n_paths: int,
    experiment: str = "transition",
    **kw,
) -> EnsembleSummary:
    """Dispatch an ensemble experiment; deterministic given (seed, n_paths, config)."""
    if experiment == "transition":
        return estimate_transition_prob(spec, params, n_paths, kw.get("convention"))
    if experiment == "band_exit":
        return band_exit_prob(spec, params, kw["h"], kw["t_probe"], n_paths)
    raise ValueError(f"unknown experiment {experiment!r}")


def band_exit_prob(
    spec: ModelSpec, params: SimParams, h: float, t_probe: float, n_paths: int
) -> EnsembleSummary:
    """Empirical P[tau_B(h) < t_probe] plus the theory bound for display.

    The bound C(t,eps)*exp(-h^2/(2 sigma^2)) with
    C = |alphabar(t,t0)|/eps^2 + 2 is reported in metadata, not asserted.
    """
    if h <= 0.0:
        raise ValueError("h must be positive")
    from .sde import band_B

    T = spec.default_window_T
    traj = default_trajectory(spec, params.eps, params.steps_per_eps, T)
    run_params = replace(params, t0=traj.t0, t1=min(t_probe, traj.t1), x0=traj.xs[0])
    band = band_B(traj, h, params.eps)
    ts = _grid_times(run_params)
    lo, hi = band.boundary_values(ts)
    stats = _run_blocks(
        spec, run_params, n_paths, exit_set=(lo, hi, 0, run_params.n_steps)
    )
    exited = ~np.isnan(stats.set_exit_times) & (stats.set_exit_times < t_probe)
    alpha_probe = float(traj.alphabar(run_params.t1))
    bound = (abs(alpha_probe) / params.eps**2 + 2.0) * math.exp(-0.5 * h**2 / params.sigma**2)
    return _summarize(
        spec,
        run_params,
        n_paths,
        exited,
        stats.escaped,
        "band_exit",
        {"h": h, "t_probe": t_probe, "theory_bound": bound},
    )


QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def transition_window_stats(
    spec: ModelSpec, params: SimParams, n_paths: int, min_transitions: int = 50
) -> dict[float, float]:
    """Quantiles of the first saddle-crossing time over transitioning paths.

    Symmetric paths cross level 0; asymmetric paths cross the moving unstable
    branch x*_0(t).  Fewer than ``min_transitions`` crossings is an
    InsufficientDataError: the regime is below threshold for this statistic.
    """
    stats = _run_blocks(spec, params, n_paths, levels=[_saddle_level(spec, params)])
    times = stats.level_hit_times[0]
    good = ~np.isnan(times) & ~stats.escaped
    n_cross = int(good.sum())
    if n_cross < min_transitions:
        raise InsufficientDataError(
            f"only {n_cross} crossing paths (< {min_transitions}); "
            "sigma is below the transition threshold for this window statistic"
        )
    qs = np.quantile(times[good], QUANTILES)
    return {q: float(v) for q, v in zip(QUANTILES, qs)}


def escape_time_stats(
    spec: ModelSpec,
    params: SimParams,
    kappa: float,
    t2: float,
    n_paths: int,
    delta: float = 1.0,
    curve_points: int = 200,
) -> list[tuple[float, float]]:
    """Empirical survival P[tau_D(kappa) >= t] for paths dropped at (0, t2)."""
    if spec.family is not Family.SYMMETRIC:
        raise ValueError("escape_time_stats applies to the symmetric family")
    region = region_D(spec, kappa, t_start=t2, t_stop=params.t1, delta=delta)
    run_params = replace(params, t0=t2, x0=0.0)
    ts = _grid_times(run_params)
    lo, hi = region.boundary_values(ts)
    stats = _run_blocks(spec, run_params, n_paths, exit_set=(lo, hi, 0, run_params.n_steps))
    exit_times = np.where(np.isnan(stats.set_exit_times), np.inf, stats.set_exit_times)
    stride = max(1, len(ts) // curve_points)
    curve = [(float(t), float(np.mean(exit_times >= t))) for t in ts[::stride]]
    if curve[-1][0] != ts[-1]:
        curve.append((float(ts[-1]), float(np.mean(exit_times >= ts[-1]))))
    return curve


def default_sigma_bracket(spec: ModelSpec, eps: float) -> tuple[float, float]:
    """Bracket straddling the threshold scale of the family."""
    if spec.family is Family.SYMMETRIC:
        scale = max(spec.a0, eps ** (2.0 / 3.0))
        return 0.3 * scale, 6.0 * scale
    scale = max(spec.a0 ** 0.75, eps ** 0.75)
    return 0.5 * scale, 8.0 * scale


def scan_window(spec: ModelSpec) -> tuple[float, float]:
    """Simulation window used by threshold scans."""
    T = spec.default_window_T
    if spec.family is Family.SYMMETRIC:
        return -T, T
    return -T, 0.25


def threshold_scan(
    spec: ModelSpec,
    eps: float,
    a0: float | None = None,
    target_p: float | None = None,
    sigma_bracket: tuple[float, float] | None = None,
    n_paths: int = 500,
    master_seed: int = 42,
    steps_per_eps: int = 100,
    convention: TransitionConvention | None = None,
    rel_width: float = 0.05,
    max_iter: int = 24,
) -> ThresholdScanResult:
    """Locate the critical noise intensity by bisection in log(sigma).

    Bisection keeps the bracket sides classified by the Wilson interval of
    each midpoint estimate; it stops once the interval can no longer exclude
    the target (the midpoint is the answer at this path budget) or the
    bracket is narrower than ``rel_width`` relative.  All evaluations share
    the master seed (common random numbers), which makes p_hat(sigma) close
    to monotone along the scan.
    """
    if a0 is not None and a0 != spec.a0:
        spec = ModelSpec(spec.family, a0, spec.x_domain)
    if target_p is None:
        target_p = 0.25 if spec.family is Family.SYMMETRIC else 0.5
    if not (0.0 < target_p < 1.0):
        raise ValueError("target_p must lie strictly between 0 and 1")
    if sigma_bracket is None:
        sigma_bracket = default_sigma_bracket(spec, eps)
    lo, hi = sigma_bracket
    if not (0.0 < lo < hi):
        raise ValueError("sigma_bracket must be increasing and positive")
    if convention is None:
        convention = default_convention(spec)

    t0, t1 = scan_window(spec)

    def evaluate(sigma: float) -> EnsembleSummary:
        params = SimParams(
            eps=eps, sigma=sigma, t0=t0, t1=t1, steps_per_eps=steps_per_eps, master_seed=master_seed
        )
        return estimate_transition_prob(spec, params, n_paths, convention)

    evals = []
    s_lo = evaluate(lo)
    s_hi = evaluate(hi)
    evals.append((lo, s_lo.p_hat, s_lo.ci_lo, s_lo.ci_hi))
    evals.append((hi, s_hi.p_hat, s_hi.ci_lo, s_hi.ci_hi))
    if not (s_lo.p_hat < target_p < s_hi.p_hat):
        raise BracketError(
            f"bracket [{lo:.4g}, {hi:.4g}] gives p = [{s_lo.p_hat:.3f}, {s_hi.p_hat:.3f}], "
            f"which does not straddle target {target_p}"
        )

    sigma_c = None
    for _ in range(max_iter):
        if hi / lo - 1.0 <= rel_width:
            break
        mid = math.sqrt(lo * hi)
        s = evaluate(mid)
        evals.append((mid, s.p_hat, s.ci_lo, s.ci_hi))
        if s.ci_lo > target_p:
            hi = mid
        elif s.ci_hi < target_p:
            lo = mid
        else:
            # the interval straddles the target: mid is the answer at this budget
            sigma_c = mid
            break
    if sigma_c is None:
        sigma_c = math.sqrt(lo * hi)
    return ThresholdScanResult(sigma_c=sigma_c, bracket_lo=lo, bracket_hi=hi, evaluations=evals)


def powerlaw_fit(points) -> PowerLawFit:
    """OLS fit of log y on log x; slope, intercept, slope stderr and r^2."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise ValueError("power-law fit needs at least 3 points")
    if any(not (math.isfinite(x) and math.isfinite(y)) or x <= 0.0 or y <= 0.0 for x, y in pts):
        raise ValueError("power-law fit needs strictly positive finite coordinates")
    lx = np.array([math.log(x) for x, _ in pts])
    ly = np.array([math.log(y) for _, y in pts])
    n = len(pts)
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    if sxx == 0.0:
        raise ValueError("degenerate fit: all x identical")
    slope = float(np.sum((lx - lx.mean()) * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    sse = float(np.sum(resid**2))
    sst = float(np.sum((ly - ly.mean()) ** 2))
    stderr = math.sqrt(sse / (n - 2) / sxx) if n > 2 else 0.0
    r2 = 1.0 if sst == 0.0 else 1.0 - sse / sst
    return PowerLawFit(
        slope=slope,
        intercept=intercept,
        stderr_slope=stderr,
        r_squared=r2,
        points=list(zip(lx.tolist(), ly.tolist())),
    )


# -- CSV emission -------------------------------------------------------------


def write_summary_csv(summaries, out) -> None:
    out.write("family,eps,sigma,a0,n_paths,n_transitions,n_escaped,p_hat,ci_lo,ci_hi\n")
    for s in summaries:
        m = s.metadata
        out.write(
            f"{m['family']},{m['eps']:.17g},{m['sigma']:.17g},{m['a0']:.17g},"
            f"{s.n_paths},{s.n_transitions},{s.n_escaped_domain},"
            f"{s.p_hat:.17g},{s.ci_lo:.17g},{s.ci_hi:.17g}\n"
        )


def write_sweep_csv(rows, out) -> None:
    """rows: iterable of (eps, a0, ThresholdScanResult)."""
    out.write("eps,a0,sigma_c,bracket_lo,bracket_hi\n")
    for eps, a0, res in rows:
        out.write(
            f"{eps:.17g},{a0:.17g},{res.sigma_c:.17g},{res.bracket_lo:.17g},{res.bracket_hi:.17g}\n"
        )


def write_fit_csv(fit: PowerLawFit, out) -> None:
    out.write("slope,intercept,stderr_slope,r_squared\n")
    out.write(f"{fit.slope:.17g},{fit.intercept:.17g},{fit.stderr_slope:.17g},{fit.r_squared:.17g}\n")

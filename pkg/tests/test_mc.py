"""Ensemble estimators, scans, fits, and their reproducibility contracts."""

import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resonance_lab import det, mc, sde
from resonance_lab.model import asymmetric_spec, symmetric_spec


def sym_params(sigma=0.08, seed=42, t0=-0.25, t1=0.25):
    return sde.SimParams(eps=0.01, sigma=sigma, t0=t0, t1=t1, steps_per_eps=100, master_seed=seed)


# -- Wilson intervals ----------------------------------------------------------


def test_wilson_edge_cases():
    lo, hi = mc.wilson_interval(0, 100)
    assert lo == 0.0 and 0.0 < hi < 0.05
    lo, hi = mc.wilson_interval(100, 100)
    assert 0.95 < lo < 1.0 and hi == 1.0
    assert mc.wilson_interval(0, 0) == (0.0, 1.0)


@given(k=st.integers(min_value=0, max_value=500), n=st.integers(min_value=1, max_value=500))
def test_wilson_orders(k, n):
    k = min(k, n)
    lo, hi = mc.wilson_interval(k, n)
    assert 0.0 <= lo <= k / n <= hi <= 1.0


def test_wilson_coverage_on_synthetic_bernoulli():
    # 95% interval covers the true p in at least 90 of 100 meta-trials
    rng = np.random.Generator(np.random.Philox(key=2024))
    p_true = 0.3
    covered = 0
    for _ in range(100):
        k = int(rng.binomial(400, p_true))
        lo, hi = mc.wilson_interval(k, 400)
        covered += int(lo <= p_true <= hi)
    assert covered >= 90


# -- summaries and their invariants ---------------------------------------------


def test_summary_invariants_enforced():
    with pytest.raises(ValueError):
        mc.EnsembleSummary(10, 5, 0, p_hat=1.5, ci_lo=0.0, ci_hi=1.0)
    with pytest.raises(ValueError):
        mc.EnsembleSummary(10, 5, 0, p_hat=0.5, ci_lo=0.6, ci_hi=0.9)
    with pytest.raises(ValueError):
        mc.EnsembleSummary(10, 8, 4, p_hat=0.5, ci_lo=0.4, ci_hi=0.6)


def test_zero_noise_gives_zero_transitions(sym_spec, asym_spec):
    s = mc.run_ensemble(sym_spec, sym_params(sigma=0.0), 1)
    assert s.n_transitions == 0 and s.p_hat == 0.0
    pa = sde.SimParams(eps=0.005, sigma=0.0, t0=-0.1, t1=0.4, steps_per_eps=100, master_seed=1)
    sa = mc.estimate_transition_prob(asym_spec, pa, 1)
    assert sa.n_transitions == 0


def test_worker_count_is_invisible(sym_spec):
    before = os.environ.get("RESONANCE_THREADS")
    try:
        os.environ["RESONANCE_THREADS"] = "1"
        s1 = mc.estimate_transition_prob(sym_spec, sym_params(), 1200)
        os.environ["RESONANCE_THREADS"] = "3"
        s3 = mc.estimate_transition_prob(sym_spec, sym_params(), 1200)
    finally:
        if before is None:
            os.environ.pop("RESONANCE_THREADS", None)
        else:
            os.environ["RESONANCE_THREADS"] = before
    assert s1 == s3


def test_escaped_fraction_negligible_in_figure_regime(sym_spec):
    s = mc.estimate_transition_prob(sym_spec, sym_params(), 500)
    assert s.n_escaped_domain / s.n_paths <= 0.01


def test_symmetric_sign_ceiling(sym_spec):
    # the sign-at-end probability can never exceed 1/2 (mirror symmetry)
    for sigma in (0.08, 0.2):
        s = mc.estimate_transition_prob(
            sym_spec, sym_params(sigma=sigma, seed=31), 800, mc.TransitionConvention.SIGN_AT_PERIOD_END
        )
        half_width = (s.ci_hi - s.ci_lo) / 2.0
        assert s.p_hat <= 0.5 + 3.0 * half_width


def test_sign_probability_is_half_of_crossing(sym_spec):
    # mirror symmetry: P[x(T) < 0] = P[crossed]/2, up to sampling error
    s = mc.estimate_transition_prob(sym_spec, sym_params(seed=11), 2000, mc.TransitionConvention.CROSSED_SADDLE)
    n_eff = s.n_paths - s.n_escaped_domain
    p_cross = s.p_hat
    p_sign = s.metadata["n_negative_at_end"] / n_eff
    assert abs(p_sign - 0.5 * p_cross) <= 0.035


def test_monotone_in_sigma_within_ci_slack(sym_spec):
    summaries = [
        mc.estimate_transition_prob(
            sym_spec, sym_params(sigma=s, seed=17), 600, mc.TransitionConvention.SIGN_AT_PERIOD_END
        )
        for s in (0.02, 0.04, 0.08, 0.16)
    ]
    for a, b in zip(summaries, summaries[1:]):
        slack = 2.0 * ((a.ci_hi - a.ci_lo) + (b.ci_hi - b.ci_lo))
        assert b.p_hat >= a.p_hat - slack


def test_a0_insensitivity_above_threshold():
    # for sigma well above max(a0, eps^(2/3)) the two a0 values agree
    outs = []
    for a0 in (0.0, 0.02):
        s = mc.estimate_transition_prob(
            symmetric_spec(a0), sym_params(seed=23), 1000, mc.TransitionConvention.SIGN_AT_PERIOD_END
        )
        outs.append(s)
    combined = (outs[0].ci_hi - outs[0].ci_lo) + (outs[1].ci_hi - outs[1].ci_lo)
    assert abs(outs[0].p_hat - outs[1].p_hat) <= 2.0 * combined


def test_asymmetric_regression_band(asym_spec):
    # figure-2 regime, reach-delta0 event; desk-scale value sits near 0.6
    pa = sde.SimParams(eps=0.005, sigma=0.08, t0=-0.1, t1=0.4, steps_per_eps=100, master_seed=42)
    s = mc.estimate_transition_prob(asym_spec, pa, 800)
    assert s.metadata["convention"] == "reached_delta0"
    assert 0.5 <= s.p_hat <= 0.7


def test_delta_levels_are_validated():
    spec = asymmetric_spec(0.005)
    with pytest.raises(ValueError):
        mc.check_delta_levels(spec, -0.5, 0.2, T=0.3)  # drift changes sign on a wider window
    mc.check_delta_levels(spec, -0.5, 0.2, T=0.1)


# -- band exit ------------------------------------------------------------------


def test_band_exit_deep_band_is_quiet():
    spec = symmetric_spec(0.01)
    eps = 0.01
    sigma = 0.25 * max(spec.a0, eps ** (2.0 / 3.0))
    params = sde.SimParams(eps=eps, sigma=sigma, t0=-0.25, t1=0.25, steps_per_eps=100, master_seed=3)
    t_probe = -2.0 * math.sqrt(spec.a0)
    s = mc.band_exit_prob(spec, params, h=10.0 * sigma, t_probe=t_probe, n_paths=800)
    assert s.p_hat <= 0.01
    # halving sigma cannot increase the exit probability
    params_half = sde.SimParams(eps=eps, sigma=sigma / 2, t0=-0.25, t1=0.25, steps_per_eps=100, master_seed=3)
    s_half = mc.band_exit_prob(spec, params_half, h=10.0 * sigma, t_probe=t_probe, n_paths=800)
    assert s_half.p_hat <= s.p_hat + 1e-12
    assert "theory_bound" in s.metadata


def test_band_exit_gaussian_tail_shape(sym_spec):
    params = sym_params(seed=3)
    t_probe = -0.18
    hs = [2.0, 3.0, 4.0, 5.0]
    ps = [
        mc.band_exit_prob(sym_spec, params, h=m * params.sigma, t_probe=t_probe, n_paths=2000).p_hat
        for m in hs
    ]
    assert all(a > b - 1e-12 for a, b in zip(ps, ps[1:]))
    pts = [(m**2, p) for m, p in zip(hs, ps) if p > 0]
    assert len(pts) >= 3
    xs = np.array([x for x, _ in pts])
    ys = np.log([p for _, p in pts])
    slope = float(np.polyfit(xs, ys, 1)[0])
    assert slope <= -0.3


# -- window statistics ----------------------------------------------------------


def test_window_stats_quantile_keys(sym_spec):
    q = mc.transition_window_stats(sym_spec, sym_params(seed=9), 800)
    assert sorted(q) == [0.05, 0.25, 0.5, 0.75, 0.95]
    assert all(q[a] <= q[b] for a, b in zip(sorted(q), sorted(q)[1:]))


def test_window_width_scales_like_sqrt_sigma():
    # two-point check of the sqrt(sigma) law; fully sub-threshold noise has
    # too few transitions, so the smaller level is 0.03, not 0.02
    spec = symmetric_spec(0.0)
    q_hi = mc.transition_window_stats(spec, sym_params(sigma=0.08, seed=9), 1500)
    q_lo = mc.transition_window_stats(spec, sym_params(sigma=0.03, seed=9), 6000)
    ratio = (q_hi[0.95] - q_hi[0.05]) / (q_lo[0.95] - q_lo[0.05])
    expected = math.sqrt(0.08 / 0.03)
    assert abs(ratio - expected) <= 0.6


def test_window_stats_insufficient_below_threshold():
    spec = symmetric_spec(0.0)
    with pytest.raises(mc.InsufficientDataError):
        mc.transition_window_stats(spec, sym_params(sigma=0.02, seed=9), 1000)


# -- saddle escape ---------------------------------------------------------------


def test_escape_survival_curve(sym_spec):
    kappa = 0.2
    t2 = math.sqrt(0.08)
    params = sde.SimParams(eps=0.01, sigma=0.08, t0=t2, t1=t2 + 1.2, steps_per_eps=100, master_seed=5)
    curve = mc.escape_time_stats(sym_spec, params, kappa=kappa, t2=t2, n_paths=1000)
    survs = [sv for _, sv in curve]
    assert all(a >= b for a, b in zip(survs, survs[1:]))
    # survival is tiny once kappa*alpha(t, t2)/eps reaches 20
    for t, sv in curve:
        if kappa * float(sym_spec.drive_a_integral(t2, t)) / params.eps >= 20.0:
            assert sv <= 0.05


def test_escape_immediate_when_started_outside(sym_spec):
    t2 = 0.3
    region = sde.region_D(sym_spec, 0.2, t_start=t2)
    x_out = float(region.upper(t2)) + 0.1
    path = sde.SamplePath(t0=t2, dt=1e-4, xs=np.full(11, x_out))
    assert sde.first_exit(path, region) == pytest.approx(t2)


# -- threshold scan and power-law fits -------------------------------------------


def test_threshold_scan_symmetric_scale():
    eps = 1e-3
    res = mc.threshold_scan(symmetric_spec(0.0), eps, n_paths=300, master_seed=7)
    ref = eps ** (2.0 / 3.0)
    assert ref / 3.0 <= res.sigma_c <= 3.0 * ref
    assert res.bracket_lo <= res.sigma_c <= res.bracket_hi
    sigmas = [e[0] for e in res.evaluations]
    p_lo = res.evaluations[0][1]
    p_hi = res.evaluations[1][1]
    assert p_lo < 0.25 < p_hi
    assert len(sigmas) == len(set(sigmas))


def test_threshold_scan_asymmetric_scale():
    eps = 1e-3
    res = mc.threshold_scan(asymmetric_spec(0.0), eps, n_paths=300, master_seed=7)
    ref = eps**0.75
    assert ref / 3.0 <= res.sigma_c <= 3.0 * ref


def test_threshold_scan_bad_bracket():
    with pytest.raises(mc.BracketError):
        mc.threshold_scan(
            symmetric_spec(0.0), 1e-3, sigma_bracket=(0.5, 1.0), n_paths=100, master_seed=7
        )


def test_powerlaw_exact_recovery():
    xs = [0.1, 0.2, 0.4, 0.8]
    fit = mc.powerlaw_fit([(x, 4.0 * x ** (2.0 / 3.0)) for x in xs])
    assert abs(fit.slope - 2.0 / 3.0) <= 1e-12
    assert abs(fit.intercept - math.log(4.0)) <= 1e-12
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.stderr_slope <= 1e-12


@settings(max_examples=25)
@given(
    slope=st.floats(min_value=-3.0, max_value=3.0),
    c=st.floats(min_value=0.1, max_value=10.0),
)
def test_powerlaw_recovers_arbitrary_exponent(slope, c):
    xs = [0.05, 0.3, 1.7, 4.0, 9.0]
    fit = mc.powerlaw_fit([(x, c * x**slope) for x in xs])
    assert fit.slope == pytest.approx(slope, abs=1e-9)


def test_powerlaw_input_validation():
    with pytest.raises(ValueError):
        mc.powerlaw_fit([(1.0, 1.0), (2.0, 2.0)])
    with pytest.raises(ValueError):
        mc.powerlaw_fit([(1.0, 1.0), (2.0, -2.0), (3.0, 3.0)])
    with pytest.raises(ValueError):
        mc.powerlaw_fit([(0.0, 1.0), (2.0, 2.0), (3.0, 3.0)])


# -- CSV emission -----------------------------------------------------------------


def test_summary_csv_schema(sym_spec):
    import io

    s = mc.estimate_transition_prob(sym_spec, sym_params(sigma=0.0), 10)
    buf = io.StringIO()
    mc.write_summary_csv([s], buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "family,eps,sigma,a0,n_paths,n_transitions,n_escaped,p_hat,ci_lo,ci_hi"
    fields = lines[1].split(",")
    assert fields[0] == "symmetric"
    assert int(fields[4]) == 10


def test_sweep_and_fit_csv_schema():
    import io

    res = mc.ThresholdScanResult(sigma_c=0.01, bracket_lo=0.009, bracket_hi=0.011, evaluations=[])
    buf = io.StringIO()
    mc.write_sweep_csv([(1e-3, 0.0, res)], buf)
    assert buf.getvalue().splitlines()[0] == "eps,a0,sigma_c,bracket_lo,bracket_hi"
    fit = mc.powerlaw_fit([(0.1, 0.1), (0.2, 0.2), (0.4, 0.4)])
    fbuf = io.StringIO()
    mc.write_fit_csv(fit, fbuf)
    assert fbuf.getvalue().splitlines()[0] == "slope,intercept,stderr_slope,r_squared"

"""Simulation lab for noise-driven transitions in slowly modulated double wells."""

from .det import (
    AmbiguousCrossingError,
    DivergedError,
    Trajectory,
    bernoulli_oracle,
    crossing_time,
    default_trajectory,
    linearized_variance,
    riccati_oracle,
    solve_deterministic,
    tracking_lag,
    zeta,
    zeta_profile,
)
from .mc import (
    BracketError,
    EnsembleSummary,
    InsufficientDataError,
    PowerLawFit,
    ThresholdScanResult,
    TransitionConvention,
    band_exit_prob,
    escape_time_stats,
    estimate_transition_prob,
    powerlaw_fit,
    run_ensemble,
    threshold_scan,
    transition_window_stats,
    wilson_interval,
)
from .model import (
    LAMBDA_C,
    X_C,
    Equilibrium,
    Family,
    ModelSpec,
    Side,
    Stability,
    asymmetric_spec,
    symmetric_spec,
)
from .sde import (
    NoiseStream,
    SamplePath,
    SimParams,
    SpaceTimeSet,
    band_B,
    coupled_pair,
    crossing_events,
    exact_ou_sample,
    first_exit,
    region_D,
    sample_path,
)

__version__ = "0.1.0"

"""Multivariate Stein jump processes, their OU diffusion limit and first passages with reset."""

from __future__ import annotations

__version__ = "0.1.0"

from .config import bundled_config, load_spec, parse_spec
from .errors import (
    ConfigError,
    EmptySample,
    EventBudgetExceeded,
    InsufficientReplications,
    NegativeRate,
    NonPositiveDiagonal,
    NotPSD,
    OutOfRange,
    SpecError,
    SteinNetError,
    StopTooSmall,
)
from .fpt_reset import (
    MarkedTrain,
    SpikeRecord,
    merge_spikes,
    read_train,
    run_ou_with_reset,
    run_stein_with_reset,
    split_spikes,
    superpose,
    write_train,
)
from .model import (
    Cluster,
    LimitParams,
    NetworkSpec,
    SteinParams,
    characteristic_exponent,
    check_scheme,
    cholesky_factor,
    exact_moment_scheme,
    limit_covariance,
    limit_drift,
    limit_params,
    scale_params,
    stein_moments,
)
from .ou_sim import GridPath, fluid_solution, ou_step_law, simulate_ou
from .rng import stream
from .stats import (
    ConvergenceReport,
    Sample,
    covariance_rate,
    ecf_check,
    fpt_convergence_report,
    ks_distance,
    total_variation_marks,
    wasserstein1,
)
from .stein_sim import JumpPath, evaluate, martingale_part, simulate_stein

"""Parametric conformal prediction regions for generalized linear models."""

from .baselines import (
    KernelConfig,
    KernelConformal,
    ResidualConformal,
    kernel_conformal_region,
    ls_region,
    lslw_region,
)
from .diagnostics import DiagnosticsReport, average_reports, coverage, evaluate, pool_reports
from .engine import ConformalConfig, IntervalUnion, adjusted_level, conformity_rank, region_from_acceptance
from .glm import (
    AugmentedFitter,
    Dataset,
    FitError,
    FittedModel,
    ModelSpec,
    SupportError,
    cdf,
    expand_design,
    fit,
    fit_mle,
    log_density,
    quantile,
    score,
)
from .parametric import (
    BinPartition,
    EmptyBinError,
    ParametricConformal,
    binned_region,
    hd_region,
    min_length_interval,
    transform_region,
)
from .simulation import SeedSpec, SimSetting, generate, make_setting, run_study
from .special import regularized_lower_gamma

__all__ = [name for name in dir() if not name.startswith("_")]

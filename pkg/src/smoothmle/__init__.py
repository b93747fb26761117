"""Gaussian-smoothed maximum likelihood for one-dimensional location estimation."""

from .distributions import (FIXTURE_NAMES, Distribution, FixtureSpec, from_json, load,
                            make_fixture)
from .errors import (AtomDensityUndefined, InvalidDistribution, InvalidFixture,
                     InvalidProbability, InvalidRadius, NoFeasibleSmoothing,
                     NoRootInInterval, NumericFailure, OffsetTooLarge, QuadratureFailure,
                     SampleSizeTooSmall, ShiftZero, SmoothMLEError, ValidationError)
from .estimators import (EstimateResult, EstimatorConfig, ProfileMLE, baseline_estimate,
                         choose_rstar, error_bound, global_mle, local_mle,
                         quantile_interval, solve_min_smoothing)
from .experiments import (CellResult, ExperimentConfig, run_coverage,
                          run_error_distribution, run_mse_heatmap)
from .lowerbound import (LowerBoundReport, check_newlb_conditions, hellinger_sq,
                         indistinguishable_shift, kl_divergence, loglik_moment,
                         tv_product_mc)
from .smoothing import SmoothedModel, smooth

__version__ = "0.1.0"

__all__ = [
    "FIXTURE_NAMES", "Distribution", "FixtureSpec", "from_json", "load", "make_fixture",
    "AtomDensityUndefined", "InvalidDistribution", "InvalidFixture", "InvalidProbability",
    "InvalidRadius", "NoFeasibleSmoothing", "NoRootInInterval", "NumericFailure",
    "OffsetTooLarge", "QuadratureFailure", "SampleSizeTooSmall", "ShiftZero",
    "SmoothMLEError", "ValidationError",
    "EstimateResult", "EstimatorConfig", "ProfileMLE", "baseline_estimate", "choose_rstar",
    "error_bound", "global_mle", "local_mle", "quantile_interval", "solve_min_smoothing",
    "CellResult", "ExperimentConfig", "run_coverage", "run_error_distribution",
    "run_mse_heatmap",
    "LowerBoundReport", "check_newlb_conditions", "hellinger_sq", "indistinguishable_shift",
    "kl_divergence", "loglik_moment", "tv_product_mc",
    "SmoothedModel", "smooth",
]

from .diagnostics import diagnostics, ess_bulk, rhat
from .posterior import (
    PosteriorSummary,
    PredictiveResult,
    RWFit,
    fit_rw,
    natural_draws,
    per_run_loglik,
    posterior_predictive,
    summarize,
)
from .reliability import ReliabilityResult, icc31, split_half_reliability
from .sampler import Fit, FitQualityError, SamplerConfig, sample

__all__ = [
    "Fit",
    "FitQualityError",
    "PosteriorSummary",
    "PredictiveResult",
    "RWFit",
    "ReliabilityResult",
    "SamplerConfig",
    "diagnostics",
    "ess_bulk",
    "fit_rw",
    "icc31",
    "natural_draws",
    "per_run_loglik",
    "posterior_predictive",
    "rhat",
    "sample",
    "split_half_reliability",
    "summarize",
]

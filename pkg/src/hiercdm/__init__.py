"""Structure learning for hierarchical cognitive diagnosis models."""

from .core import (
    AttributeProfileSet,
    DimensionError,
    HierCdmError,
    Hierarchy,
    IndicatorMatrix,
    InvalidHierarchyError,
    InvalidParamsError,
    LcmParams,
    QMatrix,
    ResponseData,
    hierarchy_template,
    induced_profiles,
)
from .estimator import (
    EmConfig,
    FitResult,
    e_step,
    fit,
    fit_missing,
    fit_stochastic,
    log_likelihood,
    random_init,
    spectral_init,
)
from .evaluate import Metrics, aggregate, score
from .recovery import RecoveryFailedError, RecoveryResult, recover
from .selection import SearchResult, TuningGrid, bic, two_stage_search
from .simulate import GroundTruth, InfeasibleDesignError, SimSpec, make_rng, simulate

__all__ = [
    "AttributeProfileSet", "DimensionError", "EmConfig", "FitResult", "GroundTruth",
    "HierCdmError", "Hierarchy", "IndicatorMatrix", "InfeasibleDesignError",
    "InvalidHierarchyError", "InvalidParamsError", "LcmParams", "Metrics", "QMatrix",
    "RecoveryFailedError", "RecoveryResult", "ResponseData", "SearchResult", "SimSpec",
    "TuningGrid", "aggregate", "bic", "e_step", "fit", "fit_missing", "fit_stochastic",
    "hierarchy_template", "induced_profiles", "log_likelihood", "make_rng", "random_init",
    "recover", "score", "simulate", "spectral_init", "two_stage_search",
]

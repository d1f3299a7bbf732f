"""Calibrated claim filtering with marginal and group-conditional coverage."""

from .calibration import (
    ConformityRecord,
    DegenerateCalibrationWarning,
    FilterResult,
    calibrate,
    conformal_quantile,
    conformity_score,
    filter_corpus,
    filter_with_model,
    weighted_conformal_quantile,
)
from .core import (
    CalibrationModel,
    Claim,
    ConformityConvention,
    Document,
    ValidationError,
    make_document,
    validate_corpus,
)
from .ensemble import (
    InfeasibleWeightsWarning,
    WeightSearchConfig,
    delta_threshold,
    doc_rates,
    ensemble_scores,
    optimize_group_weights,
    optimize_weights,
)
from .filter import (
    apply_filter,
    apply_multiplicative_filter,
    apply_threshold_filter,
    cutoff_and_gamma,
    prefix_aggregate,
)
from .metrics import coverage, evaluate, jaccard_distance, mse_vs_oracle, retention
from .shift import extract_features, fit_density_ratio, resample_calibration

__version__ = "0.1.0"

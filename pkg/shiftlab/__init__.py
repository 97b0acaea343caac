"""Transfer learning for binary classification under group-label shift."""

from .core import (
    CovariateBlock,
    CovariateVector,
    LabeledBlock,
    OutcomeModelParams,
    PooledDataset,
    SourceSample,
    TiltParams,
    joint_weight,
    label_shift_params,
    source_posterior,
    target_posterior,
    weight_components,
)
from .data_io import ColumnSchema, ModelArtifact, load_combined, load_pooled
from .exceptions import (
    ConvergenceWarning,
    IdentificationWarning,
    SeparationWarning,
    ShiftLabError,
)
from .functionals import (
    EstimatorMethod,
    FunctionalEstimate,
    estimate_iw,
    estimate_reg,
    estimate_target_mean,
)
from .inference import BootstrapResult, bootstrap_ci, bootstrap_many
from .outcome_model import (
    LogisticFit,
    LogisticOptions,
    fit_logistic,
    fit_logistic_weighted,
    select_ridge_cv,
)
from .pipeline import TwoStepEstimator, TwoStepFit, bootstrap_fit
from .rocauc import (
    EstimatedPosterior,
    FixedScore,
    WeightedCdf,
    auc,
    build_weighted_cdfs,
    evaluate_classifier,
    quantile,
    roc_at,
)
from .simlab import SimConfig, run_study
from .tilt import (
    IdentificationReport,
    TiltFit,
    TiltOptions,
    check_identification,
    conditional_loglik,
    conditional_loglik_grad,
    estimate_tilt,
    estimate_tilt_multistart,
)

__version__ = "0.1.0"

__all__ = [
    "BootstrapResult",
    "ColumnSchema",
    "ConvergenceWarning",
    "CovariateBlock",
    "CovariateVector",
    "EstimatedPosterior",
    "EstimatorMethod",
    "FixedScore",
    "FunctionalEstimate",
    "IdentificationReport",
    "IdentificationWarning",
    "LabeledBlock",
    "LogisticFit",
    "LogisticOptions",
    "ModelArtifact",
    "OutcomeModelParams",
    "PooledDataset",
    "SeparationWarning",
    "ShiftLabError",
    "SimConfig",
    "SourceSample",
    "TiltFit",
    "TiltOptions",
    "TiltParams",
    "TwoStepEstimator",
    "TwoStepFit",
    "WeightedCdf",
    "auc",
    "bootstrap_ci",
    "bootstrap_fit",
    "bootstrap_many",
    "build_weighted_cdfs",
    "check_identification",
    "conditional_loglik",
    "conditional_loglik_grad",
    "estimate_iw",
    "estimate_reg",
    "estimate_target_mean",
    "estimate_tilt",
    "estimate_tilt_multistart",
    "evaluate_classifier",
    "fit_logistic",
    "fit_logistic_weighted",
    "joint_weight",
    "label_shift_params",
    "load_combined",
    "load_pooled",
    "quantile",
    "roc_at",
    "run_study",
    "select_ridge_cv",
    "source_posterior",
    "target_posterior",
    "weight_components",
]

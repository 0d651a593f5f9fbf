"""Instrumental-variable driven domain generalization: estimators, simulators and training."""

__version__ = "0.1.0"

from .dgp import (  # noqa: E402
    DomainDataset,
    DomainParams,
    FIvtKind,
    NoiseModel,
    SharedInvariants,
    median_split,
    sample_domain_params,
    sample_linear_domain,
    sample_nonlinear_domain,
    sample_shared,
)
from .errors import (  # noqa: E402
    ConfigError,
    ContractViolation,
    InvalidArgumentError,
    IvdgError,
    LabelingError,
    ShapeError,
    SingularDesignError,
    WeakInstrumentError,
)
from .estimators import Estimator, FitResult, dg_average_fit, mae_lambda, mse_prediction, ols_fit, two_stage_fit  # noqa: E402
from .mmd import MmdConfig, MmdEstimator, median_heuristic, mmd2  # noqa: E402
from .trainer import IvdgConfig, TrainedIvdg, evaluate, train_ivdg  # noqa: E402

__all__ = [
    "ConfigError", "ContractViolation", "DomainDataset", "DomainParams", "Estimator", "FIvtKind", "FitResult",
    "InvalidArgumentError", "IvdgConfig", "IvdgError", "LabelingError", "MmdConfig", "MmdEstimator", "NoiseModel",
    "ShapeError", "SharedInvariants", "SingularDesignError", "TrainedIvdg", "WeakInstrumentError",
    "dg_average_fit", "evaluate", "mae_lambda", "median_heuristic", "median_split", "mmd2", "mse_prediction",
    "ols_fit", "sample_domain_params", "sample_linear_domain", "sample_nonlinear_domain", "sample_shared",
    "train_ivdg", "two_stage_fit",
]

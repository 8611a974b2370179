"""Trust-region variational inference with Gaussian mixture models."""

from vipspp.config import VipsConfig
from vipspp.evaluation import MmdEvaluator, compute_kernel, mmd, modes_discovered
from vipspp.exceptions import (
    ConfigError,
    FitFailedError,
    TargetEvaluationError,
    UpdateRejectedError,
    VipsError,
)
from vipspp.gaussian import Gaussian, from_natural, kl_divergence, make_gaussian
from vipspp.mixture import MixtureModel
from vipspp.runner import IterationStats, OptimizerState, run, run_iteration
from vipspp.surrogate import QuadraticSurrogate, fit_weighted_quadratic
from vipspp.targets import (
    ExternalTarget,
    GmmTarget,
    TargetDistribution,
    gaussian_target,
    logistic_regression_target,
    make_gmm_target,
    planar_robot_target,
)
from vipspp.trust_region import gva_update

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ExternalTarget",
    "FitFailedError",
    "Gaussian",
    "GmmTarget",
    "IterationStats",
    "MixtureModel",
    "MmdEvaluator",
    "OptimizerState",
    "QuadraticSurrogate",
    "TargetDistribution",
    "TargetEvaluationError",
    "UpdateRejectedError",
    "VipsConfig",
    "VipsError",
    "compute_kernel",
    "fit_weighted_quadratic",
    "from_natural",
    "gaussian_target",
    "gva_update",
    "kl_divergence",
    "logistic_regression_target",
    "make_gaussian",
    "make_gmm_target",
    "mmd",
    "modes_discovered",
    "planar_robot_target",
    "run",
    "run_iteration",
]

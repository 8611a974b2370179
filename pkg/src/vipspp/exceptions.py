"""Exception hierarchy.

Numerical failures (factorizations, infeasible dual steps, failed fits) are
raised as exceptions and caught by the optimizer, which treats them as
recoverable events rather than crashes.
"""

import numpy as np


class VipsError(Exception):
    """Base class for all errors raised by this package."""


class GaussianError(VipsError, ValueError):
    """Invalid parameters for a Gaussian distribution."""


class AsymmetricMatrixError(GaussianError):
    """Covariance or precision matrix is not symmetric within tolerance."""


class NotPositiveDefiniteError(GaussianError):
    """Covariance or precision matrix is not positive definite."""


class DimensionMismatchError(VipsError, ValueError):
    """Array shapes do not agree with the dimension of the distribution."""


class InfeasibleStepError(VipsError):
    """Interpolated natural parameters are not positive definite."""


class UpdateRejectedError(VipsError):
    """No admissible step size exists for a trust-region update."""


class FitFailedError(VipsError):
    """Normal equations of the weighted ridge regression could not be solved."""


class ConfigError(VipsError, ValueError):
    """Invalid optimizer configuration."""


class TargetEvaluationError(VipsError):
    """Evaluating the target log density failed.

    Attributes:
        samples: The batch of inputs that was being evaluated.
    """

    def __init__(self, message: str, samples: np.ndarray):
        super().__init__(message)
        self.samples = samples

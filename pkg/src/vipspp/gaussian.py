"""Full-covariance multivariate normal distributions.

A :class:`Gaussian` keeps both parameterizations that the optimizer needs:
moment form (mean, covariance) for sampling and density evaluation, and
natural form (precision ``Q = inv(cov)``, shift ``q = Q @ mean``) for the
trust-region interpolation. The Cholesky factor of the covariance and the
log-determinant are computed once at construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from vipspp.exceptions import (
    AsymmetricMatrixError,
    DimensionMismatchError,
    NotPositiveDefiniteError,
)

SYMMETRY_RTOL = 1e-10
LOG_2PI = float(np.log(2.0 * np.pi))


def _symmetrized(matrix: np.ndarray, name: str) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got shape {matrix.shape}")
    scale = np.linalg.norm(matrix)
    if np.linalg.norm(matrix - matrix.T) > SYMMETRY_RTOL * max(scale, 1e-300):
        raise AsymmetricMatrixError(f"{name} is not symmetric")
    return 0.5 * (matrix + matrix.T)


def _cholesky(matrix: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(matrix)):
        raise NotPositiveDefiniteError(f"{name} has non-finite entries")
    try:
        chol = linalg.cholesky(matrix, lower=True, check_finite=False)
    except linalg.LinAlgError as err:
        raise NotPositiveDefiniteError(f"{name} is not positive definite") from err
    if np.any(np.diag(chol) <= 0.0):
        raise NotPositiveDefiniteError(f"{name} is not positive definite")
    return chol


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Gaussian:
    """Immutable multivariate normal distribution.

    Use :func:`make_gaussian` or :func:`from_natural` instead of calling the
    constructor directly.

    Attributes:
        mean: Mean vector, shape ``(D,)``.
        cov: Covariance matrix, shape ``(D, D)``.
        chol: Lower Cholesky factor of ``cov``.
        chol_inv: Inverse of ``chol``; whitens samples with one matrix product.
        precision: Natural precision ``Q = inv(cov)``.
        shift: Natural shift ``q = Q @ mean``.
        log_det_cov: ``log |cov|``.
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray
    chol_inv: np.ndarray
    precision: np.ndarray
    shift: np.ndarray
    log_det_cov: float

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_density(self, X: np.ndarray) -> np.ndarray:
        """Log density at each row of ``X`` (a single vector is also accepted)."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"expected {self.dim} columns, got {X.shape[1]}"
            )
        z = X @ self.chol_inv.T
        z -= self.chol_inv @ self.mean
        out = -0.5 * np.einsum("ij,ij->i", z, z) - 0.5 * (
            self.log_det_cov + self.dim * LOG_2PI
        )
        return out[0] if single else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` samples as an ``(n, D)`` matrix."""
        if n < 0:
            raise ValueError("number of samples must be non-negative")
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self.chol.T

    def entropy(self) -> float:
        return 0.5 * (self.dim * (1.0 + LOG_2PI) + self.log_det_cov)


def _build(mean: np.ndarray, cov: np.ndarray) -> Gaussian:
    chol = _cholesky(cov, "covariance")
    chol_inv = linalg.solve_triangular(chol, np.eye(cov.shape[0]), lower=True, check_finite=False)
    precision = chol_inv.T @ chol_inv
    precision = 0.5 * (precision + precision.T)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return Gaussian(
        mean=_frozen(mean),
        cov=_frozen(cov),
        chol=_frozen(chol),
        chol_inv=_frozen(chol_inv),
        precision=_frozen(precision),
        shift=_frozen(precision @ mean),
        log_det_cov=log_det,
    )


def make_gaussian(mean: np.ndarray, cov: np.ndarray) -> Gaussian:
    """Construct a Gaussian from its moments.

    Args:
        mean: Mean vector of length ``D``.
        cov: Symmetric positive-definite ``(D, D)`` covariance. Asymmetry up
            to a relative Frobenius norm of 1e-10 is removed by averaging
            with the transpose.

    Raises:
        AsymmetricMatrixError: If ``cov`` is not symmetric within tolerance.
        NotPositiveDefiniteError: If the Cholesky factorization fails.
        DimensionMismatchError: If shapes do not agree.
    """
    mean = np.array(mean, dtype=float).reshape(-1)
    cov = _symmetrized(cov, "covariance").copy()
    if cov.shape[0] != mean.shape[0]:
        raise DimensionMismatchError(
            f"mean has length {mean.shape[0]} but covariance is {cov.shape}"
        )
    return _build(mean, cov)


def from_natural(precision: np.ndarray, shift: np.ndarray) -> Gaussian:
    """Construct a Gaussian from natural parameters ``(Q, q)``.

    Raises:
        NotPositiveDefiniteError: If ``Q`` is not positive definite.
    """
    precision = _symmetrized(precision, "precision")
    shift = np.asarray(shift, dtype=float).reshape(-1)
    if shift.shape[0] != precision.shape[0]:
        raise DimensionMismatchError("precision and shift dimensions differ")
    chol_q = _cholesky(precision, "precision")
    cov = linalg.cho_solve((chol_q, True), np.eye(shift.shape[0]), check_finite=False)
    cov = 0.5 * (cov + cov.T)
    mean = linalg.cho_solve((chol_q, True), shift, check_finite=False)
    return _build(mean, cov)


def gaussian_entropy(cov: np.ndarray) -> float:
    """Differential entropy ``0.5 * log |2 pi e cov|``."""
    cov = np.atleast_2d(cov)
    sign, log_det = np.linalg.slogdet(cov)
    if sign <= 0:
        raise NotPositiveDefiniteError("covariance is not positive definite")
    return 0.5 * (cov.shape[0] * (1.0 + LOG_2PI) + log_det)


def kl_divergence(g1: Gaussian, g2: Gaussian) -> float:
    """Closed-form ``KL(g1 || g2)``."""
    if g1.dim != g2.dim:
        raise DimensionMismatchError(f"dimensions differ: {g1.dim} vs {g2.dim}")
    m = linalg.solve_triangular(g2.chol, g1.chol, lower=True, check_finite=False)
    d = linalg.solve_triangular(
        g2.chol, g2.mean - g1.mean, lower=True, check_finite=False
    )
    kl = 0.5 * (
        np.sum(m * m) + d @ d - g1.dim + g2.log_det_cov - g1.log_det_cov
    )
    return max(float(kl), 0.0)


def scale_to_entropy(cov: np.ndarray, target_entropy: float) -> float:
    """Factor ``c`` such that ``c * cov`` has the requested entropy."""
    cov = np.atleast_2d(cov)
    n = cov.shape[0]
    sign, log_det = np.linalg.slogdet(cov)
    if sign <= 0:
        raise NotPositiveDefiniteError("covariance is not positive definite")
    log_det_2pie = n * (1.0 + LOG_2PI) + log_det
    return float(np.exp((2.0 * target_entropy - log_det_2pie) / n))

"""Importance-weighted ridge regression of local quadratic reward models.

The surrogate has the form ``-0.5 x^T R x + x^T r + offset``. Fits are
carried out in the whitened coordinates of a reference Gaussian (usually the
component being updated) and mapped back afterwards, which keeps the normal
equations well conditioned even for narrow or strongly correlated
components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from vipspp.exceptions import FitFailedError
from vipspp.gaussian import Gaussian

KAPPA_MIN = 1e-14
KAPPA_MAX = 1e-6


@dataclass(frozen=True)
class QuadraticSurrogate:
    """Coefficients of ``-0.5 x^T R x + x^T r + offset``."""

    R: np.ndarray
    r: np.ndarray
    offset: float = 0.0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return -0.5 * np.einsum("ni,ij,nj->n", X, self.R, X) + X @ self.r + self.offset


def num_features(dim: int) -> int:
    return 1 + dim + dim * (dim + 1) // 2


def quadratic_features(X: np.ndarray) -> np.ndarray:
    """Design-matrix rows ``(1, x_1..x_D, x_i x_j for i <= j)``.

    A single vector yields a 1-D feature vector, a matrix yields one row per
    sample. Quadratic terms are ordered row-major over the upper triangle.
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    n, d = X.shape
    iu, ju = np.triu_indices(d)
    feats = np.empty((n, num_features(d)))
    feats[:, 0] = 1.0
    feats[:, 1 : 1 + d] = X
    feats[:, 1 + d :] = X[:, iu] * X[:, ju]
    return feats[0] if single else feats


def _coefficients_to_quadratic(beta: np.ndarray, d: int):
    """Split regression coefficients into ``(A, b, c)`` of ``-0.5 x^T A x + b^T x + c``."""
    iu, ju = np.triu_indices(d)
    half = np.zeros((d, d))
    half[iu, ju] = beta[1 + d :]
    # off-diagonal coefficients appear once; spread them over both triangles
    sym = 0.5 * (half + half.T)
    sym[np.diag_indices(d)] = np.diag(half)
    return -2.0 * sym, beta[1 : 1 + d].copy(), float(beta[0])


def fit_weighted_quadratic(
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    kappa: float,
    whitener: Gaussian | None = None,
) -> QuadraticSurrogate:
    """Weighted ridge fit of a quadratic model to ``(X, y)``.

    Solves ``(F^T W F + kappa I') beta = F^T W y`` where ``F`` holds the
    quadratic features of the whitened inputs and ``I'`` is the identity
    with a zero in the position of the constant feature.

    Args:
        X: Inputs, shape ``(N, D)``.
        y: Regression targets, shape ``(N,)``.
        weights: Non-negative sample weights (normally self-normalized).
        kappa: Ridge coefficient.
        whitener: Gaussian whose mean and Cholesky factor define the
            whitening transform. ``None`` fits in the raw coordinates.

    Returns:
        The surrogate expressed in the raw coordinates, with ``R`` symmetric.

    Raises:
        FitFailedError: If the normal equations cannot be factorized or the
            coefficients are not finite.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    d = X.shape[1]
    if whitener is not None:
        Xw = linalg.solve_triangular(
            whitener.chol, (X - whitener.mean).T, lower=True, check_finite=False
        ).T
    else:
        Xw = X
    F = quadratic_features(Xw)
    FW = F.T * w
    lhs = FW @ F
    ridge = np.full(F.shape[1], kappa)
    ridge[0] = 0.0
    lhs[np.diag_indices_from(lhs)] += ridge
    rhs = FW @ y
    try:
        factor = linalg.cho_factor(lhs, lower=True, check_finite=True)
        beta = linalg.cho_solve(factor, rhs, check_finite=False)
    except (linalg.LinAlgError, ValueError) as err:
        raise FitFailedError("normal equations are singular") from err
    if not np.all(np.isfinite(beta)):
        raise FitFailedError("regression produced non-finite coefficients")

    A, b, c = _coefficients_to_quadratic(beta, d)
    if whitener is None:
        return QuadraticSurrogate(R=A, r=b, offset=c)
    # x_w = M (x - mu) with M = inv(L)
    mu = whitener.mean
    M = linalg.solve_triangular(whitener.chol, np.eye(d), lower=True, check_finite=False)
    R = M.T @ A @ M
    R = 0.5 * (R + R.T)
    Mtb = M.T @ b
    r = R @ mu + Mtb
    offset = c - 0.5 * mu @ R @ mu - Mtb @ mu
    return QuadraticSurrogate(R=R, r=r, offset=float(offset))


def adapt_ridge(
    kappa: float,
    fit_succeeded: bool,
    lower: float = KAPPA_MIN,
    upper: float = KAPPA_MAX,
) -> float:
    """Halve the ridge coefficient after a successful fit, multiply by 10 otherwise."""
    kappa = kappa / 2.0 if fit_succeeded else kappa * 10.0
    return float(min(max(kappa, lower), upper))

"""Sample-quality metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from vipspp.exceptions import DimensionMismatchError
from vipspp.mixture import MixtureModel

MEDIAN_SUBSAMPLE = 2000
_BLOCK = 2048


@dataclass(frozen=True)
class MmdKernel:
    """Squared-exponential kernel with per-dimension scaling.

    ``k(x, y) = exp(-(1/alpha) * sum_d (x_d - y_d)^2 / scale_d)`` where
    ``scale_d`` is the median squared pairwise distance of the ground truth
    along dimension ``d``.

    Attributes:
        scale: Per-dimension median squared distances (the kernel's diagonal).
        alpha: Bandwidth.
    """

    scale: np.ndarray
    alpha: float

    def __call__(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        X, Y = np.atleast_2d(X), np.atleast_2d(Y)
        s = 1.0 / np.sqrt(self.alpha * self.scale)
        # direct differences keep k(x, x) = 1 exactly, unlike the expanded square
        return np.exp(-cdist(X * s, Y * s, "sqeuclidean"))


def compute_kernel(
    ground_truth: np.ndarray,
    alpha: float,
    rng: np.random.Generator | None = None,
) -> MmdKernel:
    """Kernel scaled by per-dimension median squared distances of ``ground_truth``.

    Sets larger than 2000 points are subsampled for the median. Zero medians
    are replaced by one.
    """
    Y = np.atleast_2d(np.asarray(ground_truth, dtype=float))
    if Y.shape[0] < 2:
        raise ValueError("need at least two ground-truth samples")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if Y.shape[0] > MEDIAN_SUBSAMPLE:
        rng = np.random.default_rng(0) if rng is None else rng
        Y = Y[rng.choice(Y.shape[0], MEDIAN_SUBSAMPLE, replace=False)]
    iu, ju = np.triu_indices(Y.shape[0], k=1)
    scale = np.empty(Y.shape[1])
    for d in range(Y.shape[1]):
        col = Y[:, d]
        scale[d] = np.median((col[iu] - col[ju]) ** 2)
    scale[~(scale > 0)] = 1.0
    return MmdKernel(scale=scale, alpha=float(alpha))


def _mean_kernel(kernel: MmdKernel, X: np.ndarray, Y: np.ndarray) -> float:
    total = 0.0
    for i in range(0, X.shape[0], _BLOCK):
        total += kernel(X[i : i + _BLOCK], Y).sum()
    return total / (X.shape[0] * Y.shape[0])


def mmd(X: np.ndarray, Y: np.ndarray, kernel: MmdKernel, yy_term: float | None = None) -> float:
    """Biased (V-statistic) squared maximum mean discrepancy.

    Args:
        X: First sample set ``(m, D)``.
        Y: Second sample set ``(n, D)``.
        kernel: Kernel from :func:`compute_kernel`.
        yy_term: Precomputed mean of ``k(y_i, y_j)``; lets repeated
            comparisons against a fixed ground truth skip the largest block.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ValueError("sample sets must be non-empty")
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatchError("sample sets have different dimensions")
    xx = _mean_kernel(kernel, X, X)
    yy = _mean_kernel(kernel, Y, Y) if yy_term is None else yy_term
    xy = _mean_kernel(kernel, X, Y)
    return float(xx + yy - 2.0 * xy)


class MmdEvaluator:
    """MMD against a fixed ground-truth set, caching the ground-truth block."""

    def __init__(self, ground_truth: np.ndarray, alpha: float):
        self.ground_truth = np.atleast_2d(np.asarray(ground_truth, dtype=float))
        self.kernel = compute_kernel(self.ground_truth, alpha)
        self._yy = _mean_kernel(self.kernel, self.ground_truth, self.ground_truth)

    def __call__(self, X: np.ndarray) -> float:
        return mmd(X, self.ground_truth, self.kernel, yy_term=self._yy)


def modes_discovered(
    m: MixtureModel,
    target_means: Sequence[np.ndarray],
    target_covs: Sequence[np.ndarray],
    max_distance: float = 3.0,
    min_weight: float = 1e-3,
) -> int:
    """Count target components matched by a sufficiently heavy learned component.

    A target component counts when some learned component with weight at
    least ``min_weight`` has its mean within Mahalanobis distance
    ``max_distance`` of the target mean, measured with the target covariance.
    """
    heavy = np.array([c.mean for c, w in zip(m.components, m.weights) if w >= min_weight])
    if heavy.size == 0:
        return 0
    found = 0
    for mean, cov in zip(target_means, target_covs):
        chol = linalg.cholesky(np.atleast_2d(cov), lower=True)
        z = linalg.solve_triangular(chol, (heavy - mean).T, lower=True)
        if np.min(np.sqrt(np.sum(z * z, axis=0))) <= max_distance:
            found += 1
    return found

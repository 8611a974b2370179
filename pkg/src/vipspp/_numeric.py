"""Small numerical helpers for hot loops."""

from __future__ import annotations

import numpy as np


def logsumexp(a: np.ndarray, axis: int, keepdims: bool = False) -> np.ndarray:
    """Max-shifted ``log(sum(exp(a)))`` along ``axis`` for real arrays.

    Equivalent to :func:`scipy.special.logsumexp` without weights, but with
    far less per-call overhead on the large 2-D arrays of the inner loop.
    Slices that are entirely ``-inf`` give ``-inf``.
    """
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)

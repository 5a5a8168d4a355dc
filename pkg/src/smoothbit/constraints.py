"""Layer-mean functional, zero-mean projection, and the constant-shift map.

For a weight matrix ``W`` of shape ``(n, m)`` the layer mean is the average of
all entries; the projection removes it. Every matrix splits orthogonally as
``layer_mean(W) * ones + zero_mean_project(W)``.
"""

from __future__ import annotations

import numpy as np

from smoothbit.errors import PreconditionError, ShapeError

# Per-entry tolerance used when checking that a matrix is already zero-mean.
ZERO_MEAN_TOL = 1e-12


def _as_matrix(W):
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.size == 0:
        raise ShapeError(f"expected a non-empty 2-D weight matrix, got shape {W.shape}")
    return W


def layer_mean(W) -> float:
    """Mean of all entries.

    Sums deviations from the first entry and adds it back, so a constant
    matrix has exactly its constant as mean. ``np.sum`` over the flattened
    contiguous buffer uses pairwise summation, which keeps the rounding error
    logarithmic in the entry count.
    """
    W = _as_matrix(W)
    flat = np.ascontiguousarray(W).ravel()
    pivot = flat[0]
    return float(pivot + np.sum(flat - pivot) / W.size)


def zero_mean_project(W) -> np.ndarray:
    """W - layer_mean(W) * ones."""
    W = _as_matrix(W)
    return W - layer_mean(W)


def shift_isometry(W, c: float) -> np.ndarray:
    """Map a zero-mean matrix onto the hyperplane of matrices with mean ``c``."""
    W = _as_matrix(W)
    alpha = layer_mean(W)
    if abs(alpha) > ZERO_MEAN_TOL * W.size:
        raise PreconditionError(
            f"shift_isometry expects a zero-mean matrix, layer mean is {alpha:.3e}"
        )
    return W + c


def frobenius_inner(A, B) -> float:
    return float(np.sum(np.asarray(A, dtype=float) * np.asarray(B, dtype=float)))

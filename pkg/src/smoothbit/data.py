"""Compactly supported sample sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from smoothbit.errors import DomainError


@dataclass(frozen=True)
class Dataset:
    """Sample pairs with inputs ``X`` of shape (N, d) and targets ``Y`` of shape (N, k).

    The empirical measure of the pairs plays the role of the data law; every
    coordinate is bounded by ``support_bound`` in absolute value.
    """

    X: np.ndarray
    Y: np.ndarray
    support_bound: float

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if len(X) == 0:
            raise DomainError("dataset must contain at least one sample")
        if len(X) != len(Y):
            raise DomainError(f"{len(X)} inputs but {len(Y)} targets")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DomainError("dataset contains non-finite values")
        bound = self.support_bound
        if np.max(np.abs(X), initial=0.0) > bound or np.max(np.abs(Y), initial=0.0) > bound:
            raise DomainError(f"samples exceed the support bound R={bound}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    def __len__(self):
        return len(self.X)

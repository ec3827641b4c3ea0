from __future__ import annotations

import numpy as np

from .errors import DivergenceError

DIVERGENCE_NORM = 1e12


def machine_average(X: np.ndarray) -> np.ndarray:
    """Mean over axis 0 that does not depend on row order.

    Each column is sorted before summing, so permuting machines (rows) gives a
    bit-identical result.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 1 or not (X != X[0]).any():
        # identical rows (including M = 1) average to themselves exactly
        return X[0].copy()
    return np.sort(X, axis=0).sum(axis=0) / X.shape[0]


def guard(X: np.ndarray, step: int, what: str = "iterate") -> None:
    """Raise DivergenceError if any row of X is non-finite or too large."""
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    bad = ~(norms <= DIVERGENCE_NORM)
    if bad.any():
        m = int(np.flatnonzero(bad)[0])
        raise DivergenceError(
            f"{what} diverged on machine {m} at step {step} (norm {norms[m]:.3e})",
            machine=m,
            step=step,
        )

"""Input validation helpers built on :func:`sklearn.utils.check_array`."""

import numpy as np
from sklearn.utils import check_array

from .exceptions import CountExceedsInput, ShapeMismatch


def check_coords(X, dims=3, name="coords", min_rows=1):
    """Return ``X`` as a finite float64 ``(n, dims)`` array."""
    if isinstance(X, np.ndarray) and X.dtype == np.float64 and X.ndim == 2 and X.shape[0] >= min_rows:
        # fast path for arrays produced inside the pipeline
        if not np.isfinite(X).all():
            raise ValueError(f"{name} contains NaN or infinity")
        if X.shape[1] < dims:
            raise ShapeMismatch(f"{name} needs at least {dims} columns, got {X.shape[1]}")
        return X
    X = check_array(X, dtype=np.float64, ensure_min_samples=min_rows,
                    ensure_all_finite=True, input_name=name)
    if X.shape[1] < dims:
        raise ShapeMismatch(f"{name} needs at least {dims} columns, got {X.shape[1]}")
    return X


def check_features(F, n_rows=None, name="features"):
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    if F.ndim == 2 and np.isfinite(F).all():
        if n_rows is not None and F.shape[0] != n_rows:
            raise ShapeMismatch(f"{name} has {F.shape[0]} rows, expected {n_rows}")
        return F
    F = check_array(F, dtype=np.float64, ensure_min_features=0,
                    ensure_min_samples=0, ensure_all_finite=True, input_name=name)
    if n_rows is not None and F.shape[0] != n_rows:
        raise ShapeMismatch(f"{name} has {F.shape[0]} rows, expected {n_rows}")
    return F


def check_count(count, n_available):
    count = int(count)
    if count < 1:
        raise ValueError(f"sample count must be >= 1, got {count}")
    if count > n_available:
        raise CountExceedsInput(f"requested {count} samples from {n_available} points")
    return count

"""Input validation helpers used by the estimators and array-level operations."""

import numpy as np

from .errors import ShapeError


def as_float_array(x, name, ndim=None, require_finite=True):
    """Coerce to a float64 ndarray and optionally enforce rank and finiteness."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if require_finite and arr.size and not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite values")
    return arr


def as_matrix(x, name):
    """Coerce to a 2-d float64 array, promoting 1-d input to a single column."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return as_float_array(arr, name, ndim=2)


def check_same_length(name_a, a, name_b, b):
    if len(a) != len(b):
        raise ShapeError(
            f"{name_a} and {name_b} must have equal length, got {len(a)} and {len(b)}"
        )


def check_binary_treatment(t, name="t"):
    """Validate a treatment vector and return it as an int64 0/1 array."""
    arr = np.asarray(t)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    values = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isin(values, (0.0, 1.0))):
        raise ShapeError(f"{name} must contain only 0/1 entries")
    return values.astype(np.int64)

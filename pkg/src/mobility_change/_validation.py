"""Input validation helpers shared by the estimators and functional API."""

import numbers

import numpy as np
from sklearn.utils import check_array

from .exceptions import DataError, NumericError


def as_matrix(X, *, name="X", allow_nan=False, min_rows=1, min_cols=1):
    """Coerce ``X`` to a 2-D float64 array, rejecting non-finite entries."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise DataError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if not allow_nan and X.size and not np.all(np.isfinite(X.astype(float, copy=False))):
        raise NumericError(f"{name} contains non-finite entries")
    return check_array(
        X,
        dtype=np.float64,
        ensure_all_finite="allow-nan" if allow_nan else True,
        ensure_min_samples=min_rows,
        ensure_min_features=min_cols,
        copy=False,
    )


def as_vector(x, *, name="x", allow_nan=False, min_length=1):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        x = x.reshape(-1)
    if x.shape[0] < min_length:
        raise DataError(f"{name} needs at least {min_length} entries, got {x.shape[0]}")
    if not allow_nan and not np.all(np.isfinite(x)):
        raise NumericError(f"{name} contains non-finite entries")
    return x


def check_int(value, *, name, low=None, high=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise DataError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if low is not None and value < low:
        raise DataError(f"{name} must be >= {low}, got {value}")
    if high is not None and value > high:
        raise DataError(f"{name} must be <= {high}, got {value}")
    return value


def check_choice(value, choices, *, name):
    if value not in choices:
        raise DataError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value

"""Input checks shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ConfigurationError, UsageError


def check_matrix(X, n_features=None, name="X"):
    """Finite float64 2-D array, optionally with a fixed column count."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True, input_name=name)
    if n_features is not None and X.shape[1] != n_features:
        raise ConfigurationError(f"{name} has {X.shape[1]} features, expected {n_features}")
    return X


def check_binary(y, name="y", n_samples=None):
    y = np.asarray(y)
    if y.ndim != 1:
        y = y.ravel()
    if y.size == 0:
        raise UsageError(f"{name} is empty")
    if not np.isin(y, (0, 1)).all():
        raise UsageError(f"{name} must contain only 0/1 values")
    if n_samples is not None and y.shape[0] != n_samples:
        raise UsageError(f"{name} has {y.shape[0]} entries, expected {n_samples}")
    return y.astype(np.int64)


def check_label_pair(y, n_samples):
    """Split a ``(n, 2)`` target array into ``(public, private)`` 0/1 vectors."""
    y = np.asarray(y)
    if y.ndim != 2 or y.shape[1] != 2:
        raise UsageError("targets must have shape (n_samples, 2): columns (public, private)")
    return check_binary(y[:, 0], "public labels", n_samples), check_binary(y[:, 1], "private labels", n_samples)

"""Argument checks shared by the estimator and the solver entry points."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_points(X, name="X", n_features=None):
    """2-d finite float array with at least one row."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True,
                    input_name=name)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"{name} has {X.shape[1]} features, expected {n_features}")
    return X


def check_capacities(capacities, n_facilities):
    """Integer capacities >= 1, one per facility; a scalar is broadcast."""
    caps = np.asarray(capacities)
    if caps.ndim == 0:
        caps = np.full(n_facilities, caps.item())
    if caps.shape != (n_facilities,):
        raise ValueError(f"expected {n_facilities} capacities, got shape {caps.shape}")
    if not np.issubdtype(caps.dtype, np.number) or not np.all(np.isfinite(caps)):
        raise ValueError("capacities must be finite numbers")
    if not np.all(caps == np.round(caps)):
        raise ValueError("capacities must be integers")
    if np.any(caps < 1):
        raise ValueError("capacities must be >= 1")
    return caps.astype(np.int64)


def check_k(k, n_facilities):
    if not isinstance(k, numbers.Integral) or isinstance(k, bool):
        raise TypeError(f"k must be an integer, got {type(k).__name__}")
    if not 1 <= k <= n_facilities:
        raise ValueError(f"k={k} must lie in [1, {n_facilities}]")
    return int(k)


def check_eps(eps):
    if not isinstance(eps, numbers.Real) or isinstance(eps, bool):
        raise TypeError("eps must be a real number")
    if not 0 < eps <= 1:
        raise ValueError(f"eps={eps} must lie in (0, 1]")
    return float(eps)


def check_optional_int(value, name, low=1):
    if value is None:
        return None
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise TypeError(f"{name} must be an integer or None")
    if value < low:
        raise ValueError(f"{name} must be >= {low}")
    return int(value)

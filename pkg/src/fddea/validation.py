"""Input validation helpers shared by the estimators and protocol code."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_matrix(X, *, n_columns=None, name="X", min_rows=1):
    """Return ``X`` as a finite 2-D float64 array.

    A 1-D input is treated as a single row.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    X = check_array(X, dtype=np.float64, ensure_min_samples=min_rows,
                    input_name=name)
    if n_columns is not None and X.shape[1] != n_columns:
        raise ValueError(
            f"{name} has {X.shape[1]} columns, expected {n_columns}")
    return X


def check_same_shape(*arrays, names=None):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) > 1:
        label = ", ".join(names) if names else "inputs"
        raise ValueError(f"shape mismatch across {label}: {sorted(shapes)}")


def check_within_bounds(X, lower, upper, *, name="X"):
    if np.any(X < lower) or np.any(X > upper):
        bad = np.argwhere((X < lower) | (X > upper))[0]
        raise ValueError(
            f"{name}[{bad[0]}, {bad[1]}] = {X[bad[0], bad[1]]!r} lies outside "
            f"[{lower[bad[1]]}, {upper[bad[1]]}]")

"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np


def check_X(X, n_features: int | None = None) -> np.ndarray:
    """Return ``X`` as a finite 2-D float64 array."""
    if hasattr(X, "X") and hasattr(X, "columns"):  # FeatureMatrix
        X = X.X
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1) if n_features and X.size == n_features else X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        bad = np.argwhere(~np.isfinite(X))[0]
        raise ValueError(f"X contains NaN or infinity (first at row {bad[0]}, column {bad[1]})")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, model expects {n_features}")
    return X


def check_binary_y(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y).reshape(-1)
    if y.shape[0] != n_samples:
        raise ValueError(f"X has {n_samples} rows but y has {y.shape[0]}")
    values = np.unique(y)
    if not np.all(np.isin(values, (0, 1))):
        raise ValueError(f"labels must be 0/1, got {values[:5].tolist()}")
    return y.astype(np.float64)


def check_Xy(X, y):
    X = check_X(X)
    if X.shape[0] == 0:
        raise ValueError("cannot fit on an empty matrix")
    return X, check_binary_y(y, X.shape[0])


def class_sample_weight(y: np.ndarray, class_weight) -> np.ndarray:
    """Per-row weights; ``"balanced"`` gives each class equal total weight."""
    if class_weight is None:
        return np.ones_like(y, dtype=np.float64)
    if class_weight == "balanced":
        n = y.size
        n_pos = y.sum()
        n_neg = n - n_pos
        w_pos = n / (2.0 * n_pos) if n_pos else 0.0
        w_neg = n / (2.0 * n_neg) if n_neg else 0.0
        return np.where(y == 1, w_pos, w_neg)
    if isinstance(class_weight, dict):
        return np.where(y == 1, float(class_weight.get(1, 1.0)), float(class_weight.get(0, 1.0)))
    raise ValueError(f"unsupported class_weight {class_weight!r}")

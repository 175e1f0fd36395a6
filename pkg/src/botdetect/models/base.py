from __future__ import annotations

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted


def logloss_gradient(raw: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d/d(raw) of the logistic loss ``log(1 + e^raw) - y * raw``."""
    return expit(raw) - y


def logloss(raw: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, raw) - y * raw


def normalized_importance(per_tree: list[np.ndarray], n_features: int) -> np.ndarray:
    """Average of per-tree normalised gains, renormalised to sum to one."""
    total = np.zeros(n_features)
    for gains in per_tree:
        s = gains.sum()
        if s > 0:
            total += gains / s
    s = total.sum()
    if s <= 0:
        # No split anywhere: spread importance evenly rather than return zeros.
        return np.full(n_features, 1.0 / n_features) if n_features else total
    return total / s


class BinaryClassifier(ClassifierMixin, BaseEstimator):
    """Shared prediction surface: ``decision_function`` gives the positive score."""

    family = ""

    def predict_proba(self, X) -> np.ndarray:
        p = self.positive_score(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.positive_score(X) >= threshold).astype(np.int8)

    def positive_score(self, X) -> np.ndarray:
        raise NotImplementedError

    def _check_fitted(self):
        check_is_fitted(self, "n_features_in_")

    @property
    def classes_(self):
        return np.array([0, 1])

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .._validation import check_X, check_Xy, class_sample_weight
from .base import BinaryClassifier, logloss_gradient, normalized_importance
from .tree import LEAF, PresortedData, Tree, build_tree_levelwise

_PRIOR_EPS = 1e-6


class GradientBoosting(BinaryClassifier):
    """Logistic-loss gradient boosting with depth-limited regression trees.

    Each stage fits a tree to the negative gradient ``y - p`` by squared
    error, then sets every leaf to the Newton step
    ``sum(y - p) / sum(p (1 - p))`` over its rows. Raw scores start at the
    training log-odds and accumulate ``learning_rate * tree(x)`` in stage
    order.
    """

    family = "gradient_boosting"

    def __init__(self, n_estimators=100, max_depth=3, learning_rate=0.05,
                 min_samples_split=2, min_samples_leaf=1, class_weight=None,
                 random_state=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf
        self.class_weight = class_weight
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_Xy(X, y)
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        n, d = X.shape
        weight = class_sample_weight(y, self.class_weight)
        unit = self.class_weight is None
        prior = float(np.clip((weight * y).sum() / weight.sum(), _PRIOR_EPS, 1 - _PRIOR_EPS))
        self.init_ = float(np.log(prior / (1 - prior)))
        self.n_features_in_ = d
        self.estimators_ = []

        active = np.flatnonzero(X.max(axis=0) > X.min(axis=0))
        if self.n_estimators == 0 or active.size == 0:
            return self
        data = PresortedData(np.ascontiguousarray(X[:, active]))
        raw = np.full(n, self.init_)
        for _ in range(self.n_estimators):
            residual = -logloss_gradient(raw, y)
            p = expit(raw)
            hess = p * (1.0 - p)

            def newton(rows, residual=residual, hess=hess):
                den = float((weight[rows] * hess[rows]).sum())
                num = float((weight[rows] * residual[rows]).sum())
                return num / den if den > 1e-12 else 0.0

            tree = build_tree_levelwise(data, residual, None if unit else weight, newton, self.max_depth,
                                        self.min_samples_split, self.min_samples_leaf)
            internal = tree.feature != LEAF
            tree.feature[internal] = active[tree.feature[internal]]
            raw += self.learning_rate * tree.predict(X)
            self.estimators_.append(tree)
        return self

    def decision_function(self, X) -> np.ndarray:
        """Raw log-odds: prior plus shrunken tree outputs, summed in stage order."""
        self._check_fitted()
        X = check_X(X, self.n_features_in_)
        raw = np.full(X.shape[0], self.init_)
        for tree in self.estimators_:
            raw += self.learning_rate * tree.predict(X)
        return raw

    def positive_score(self, X) -> np.ndarray:
        return expit(self.decision_function(X))

    @property
    def feature_importances_(self) -> np.ndarray:
        self._check_fitted()
        return normalized_importance(
            [t.feature_gains(self.n_features_in_) for t in self.estimators_],
            self.n_features_in_)

    def _get_state(self) -> dict:
        return {"n_features": self.n_features_in_, "init": self.init_,
                "trees": [t.to_dict() for t in self.estimators_]}

    def _set_state(self, state: dict):
        self.n_features_in_ = int(state["n_features"])
        self.init_ = float(state["init"])
        self.estimators_ = [Tree.from_dict(t) for t in state["trees"]]
        return self

from __future__ import annotations

import math

import numpy as np

from .._validation import check_X, check_Xy, class_sample_weight
from .base import BinaryClassifier, normalized_importance
from .tree import Tree, build_tree_random


def resolve_max_features(max_features, n_features: int) -> int:
    if max_features is None:
        return n_features
    if max_features == "sqrt":
        return max(1, math.ceil(math.sqrt(n_features)))
    if max_features == "log2":
        return max(1, math.ceil(math.log2(n_features))) if n_features > 1 else 1
    if isinstance(max_features, float):
        if not 0 < max_features <= 1:
            raise ValueError("fractional max_features must be in (0, 1]")
        return max(1, math.ceil(max_features * n_features))
    k = int(max_features)
    if k < 1:
        raise ValueError("max_features must be >= 1")
    return min(k, n_features)


class RandomForest(BinaryClassifier):
    """Bagged CART trees with Gini splits and random feature subsets.

    Parameters
    ----------
    n_estimators : int
        Number of trees.
    max_depth : int or None
        Depth limit; ``None`` grows trees until leaves are pure.
    max_features : {"sqrt", "log2"}, int, float or None
        Features evaluated per split; default ``ceil(sqrt(n_features))``.
    class_weight : None, "balanced" or dict
        Off by default.
    random_state : int
        Master seed. Tree ``i`` uses the ``i``-th child of
        ``SeedSequence(random_state)``, so results do not depend on
        evaluation order.
    """

    family = "random_forest"

    def __init__(self, n_estimators=100, max_depth=None, max_features="sqrt",
                 min_samples_split=2, min_samples_leaf=1, bootstrap=True,
                 class_weight=None, random_state=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf
        self.bootstrap = bootstrap
        self.class_weight = class_weight
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_Xy(X, y)
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 or None")
        n, d = X.shape
        k = resolve_max_features(self.max_features, d)
        weight = None if self.class_weight is None else class_sample_weight(y, self.class_weight)
        XT = np.ascontiguousarray(X.T)
        candidates = np.flatnonzero(X.max(axis=0) > X.min(axis=0)) if n else np.arange(d)
        seeds = np.random.SeedSequence(int(self.random_state)).spawn(self.n_estimators)
        trees = []
        for seq in seeds:
            rng = np.random.default_rng(seq)
            idx = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            idx.sort()
            trees.append(build_tree_random(
                XT, y, weight, idx, rng, k, self.max_depth,
                self.min_samples_split, self.min_samples_leaf, candidates))
        self.estimators_ = trees
        self.n_features_in_ = d
        return self

    def positive_score(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_X(X, self.n_features_in_)
        total = np.zeros(X.shape[0])
        for tree in self.estimators_:
            total += tree.predict(X)
        return np.clip(total / len(self.estimators_), 0.0, 1.0)

    def tree_votes(self, X) -> np.ndarray:
        """Fraction of trees whose leaf majority is malicious."""
        X = check_X(X, self.n_features_in_)
        votes = sum((t.predict(X) > 0.5).astype(float) for t in self.estimators_)
        return votes / len(self.estimators_)

    @property
    def feature_importances_(self) -> np.ndarray:
        self._check_fitted()
        return normalized_importance(
            [t.feature_gains(self.n_features_in_) for t in self.estimators_],
            self.n_features_in_)

    def _get_state(self) -> dict:
        return {"n_features": self.n_features_in_,
                "trees": [t.to_dict() for t in self.estimators_]}

    def _set_state(self, state: dict):
        self.n_features_in_ = int(state["n_features"])
        self.estimators_ = [Tree.from_dict(t) for t in state["trees"]]
        return self

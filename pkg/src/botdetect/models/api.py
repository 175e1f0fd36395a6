"""Uniform train/score/select/persist surface over the three model families."""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Mapping, Sequence

import numpy as np
from sklearn.model_selection import StratifiedKFold

from ..matrix import FeatureMatrix, SchemaMismatchError, first_schema_difference, schema_fingerprint
from ..metrics import classification_metrics
from .base import BinaryClassifier
from .boosting import GradientBoosting
from .forest import RandomForest
from .logistic import L1LogisticRegression

FAMILIES = ("logreg", "random_forest", "gradient_boosting")
FORMAT = "botdetect.model"
FORMAT_VERSION = 1

_ESTIMATORS = {
    "logreg": L1LogisticRegression,
    "random_forest": RandomForest,
    "gradient_boosting": GradientBoosting,
}


class ModelFormatError(ValueError):
    pass


class GridSearchError(ValueError):
    pass


@dataclass(frozen=True)
class HyperParams:
    """Model family plus its hyper-parameters.

    Only the fields of the chosen family are used; the rest keep defaults.
    """

    family: str
    l1_strength: float = 1e-3
    n_trees: int = 100
    forest_max_depth: int | None = None
    features_per_split: str | int | float | None = "sqrt"
    n_estimators: int = 100
    max_depth: int = 3
    learning_rate: float = 0.05
    class_weight: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        if not self.l1_strength > 0:
            raise ValueError("l1_strength must be > 0")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.forest_max_depth is not None and self.forest_max_depth < 1:
            raise ValueError("forest_max_depth must be >= 1 or None")
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def estimator(self) -> BinaryClassifier:
        if self.family == "logreg":
            return L1LogisticRegression(l1_strength=self.l1_strength,
                                        class_weight=self.class_weight, random_state=self.seed)
        if self.family == "random_forest":
            return RandomForest(n_estimators=self.n_trees, max_depth=self.forest_max_depth,
                                max_features=self.features_per_split,
                                class_weight=self.class_weight, random_state=self.seed)
        return GradientBoosting(n_estimators=self.n_estimators, max_depth=self.max_depth,
                                learning_rate=self.learning_rate,
                                class_weight=self.class_weight, random_state=self.seed)

    def relevant(self) -> dict:
        """The fields that affect this family."""
        keep = {"logreg": ("l1_strength",),
                "random_forest": ("n_trees", "forest_max_depth", "features_per_split"),
                "gradient_boosting": ("n_estimators", "max_depth", "learning_rate")}[self.family]
        out = {"family": self.family}
        out.update({k: getattr(self, k) for k in keep})
        out["class_weight"] = self.class_weight
        out["seed"] = self.seed
        return out

    def size_key(self) -> tuple:
        """Smaller means a smaller model: fewer trees, shallower, stronger L1."""
        if self.family == "random_forest":
            depth = math.inf if self.forest_max_depth is None else self.forest_max_depth
            return (self.n_trees, depth, 0.0)
        if self.family == "gradient_boosting":
            return (self.n_estimators, self.max_depth, 0.0)
        return (0, 0, -self.l1_strength)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyper-parameter(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class Model:
    params: HyperParams
    estimator: BinaryClassifier
    columns: tuple[str, ...]

    @property
    def family(self) -> str:
        return self.params.family

    @property
    def fingerprint(self) -> str:
        return schema_fingerprint(self.columns)


def _as_arrays(X, y=None):
    if isinstance(X, FeatureMatrix):
        return X.X, (X.y if y is None else y), X.columns
    X = np.asarray(X, dtype=np.float64)
    return X, y, tuple(f"f{i}" for i in range(X.shape[1]))


def train(X, params: HyperParams, y=None) -> Model:
    """Fit the family named by ``params`` on a FeatureMatrix (or array + ``y``)."""
    arr, labels, columns = _as_arrays(X, y)
    if arr.shape[0] == 0:
        raise ValueError("cannot train on an empty matrix")
    est = params.estimator().fit(arr, labels)
    return Model(params, est, tuple(columns))


def predict_proba(model: Model, X) -> np.ndarray:
    """Malicious-class scores in [0, 1]."""
    if isinstance(X, FeatureMatrix):
        if X.fingerprint != model.fingerprint:
            raise SchemaMismatchError(
                "schema mismatch at " + first_schema_difference(model.columns, X.columns))
        X = X.X
    return model.estimator.positive_score(X)


def feature_importance(model: Model) -> list[tuple[str, float]]:
    """Features by decreasing importance; ties keep schema order.

    Tree families report normalised mean impurity decrease. For logistic
    regression the ranking is by |standardised coefficient|, which is only a
    rough guide when features are correlated.
    """
    imp = model.estimator.feature_importances_
    order = sorted(range(len(imp)), key=lambda i: (-imp[i], i))
    return [(model.columns[i], float(imp[i])) for i in order]


def stratified_folds(y: np.ndarray, k: int, seed: int):
    y = np.asarray(y).astype(int)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if k < 2:
        raise GridSearchError("k must be >= 2")
    if n_pos < k or n_neg < k:
        raise GridSearchError(
            f"{k}-fold split would leave a fold without {'positives' if n_pos < k else 'negatives'}"
            f" ({n_pos} positive, {n_neg} negative rows); use a smaller k")
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed % (2 ** 32))
    folds = list(splitter.split(np.zeros(y.size), y))
    for train_idx, test_idx in folds:
        if y[test_idx].sum() == 0 or y[train_idx].sum() == 0:
            raise GridSearchError("a fold lost all positives; use a smaller k")
    return folds


def expand_grid(family: str, grid: Mapping[str, Sequence], base: HyperParams | None = None
                ) -> list[HyperParams]:
    base = base if base is not None else HyperParams(family)
    if base.family != family:
        base = replace(base, family=family)
    names = list(grid)
    if not names:
        return [base]
    cells = []
    for combo in itertools.product(*(grid[n] for n in names)):
        cells.append(replace(base, **dict(zip(names, combo))))
    return cells


def grid_search(X, family: str, grid: Mapping[str, Sequence], k: int = 5, seed: int = 0,
                base: HyperParams | None = None, y=None
                ) -> tuple[HyperParams, dict[HyperParams, float]]:
    """Pick the grid cell with the best stratified k-fold mean F1 at 0.5.

    Ties go to the smaller model (see :meth:`HyperParams.size_key`), then to
    the earlier cell.
    """
    arr, labels, _ = _as_arrays(X, y)
    labels = np.asarray(labels).astype(int)
    cells = expand_grid(family, grid, base)
    if not cells:
        raise GridSearchError("empty grid")
    folds = stratified_folds(labels, k, seed)
    scores: dict[HyperParams, float] = {}
    for cell in cells:
        f1s = []
        for train_idx, test_idx in folds:
            est = cell.estimator().fit(arr[train_idx], labels[train_idx])
            f1s.append(classification_metrics(labels[test_idx],
                                               est.positive_score(arr[test_idx])).f1)
        scores[cell] = float(np.mean(f1s))
    best = min(cells, key=lambda c: (-scores[c], c.size_key()))
    return best, scores


# -- persistence -------------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def serialize(model: Model) -> bytes:
    """Versioned JSON document with a SHA-256 checksum over the model body."""
    body = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "family": model.family,
        "params": model.params.to_dict(),
        "columns": list(model.columns),
        "fingerprint": model.fingerprint,
        "state": model.estimator._get_state(),
    }
    text = _canonical(body)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return ('{"checksum":"' + digest + '","model":' + text + "}\n").encode("utf-8")


def deserialize(data: bytes) -> Model:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"not a model document: {exc}") from None
    if not isinstance(doc, dict) or "model" not in doc or "checksum" not in doc:
        raise ModelFormatError("not a model document: missing checksum or body")
    body = doc["model"]
    if not isinstance(body, dict) or body.get("format") != FORMAT:
        raise ModelFormatError("not a model document: wrong format tag")
    if body.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {body.get('format_version')!r} "
            f"(this build reads version {FORMAT_VERSION})")
    digest = hashlib.sha256(_canonical(body).encode("utf-8")).hexdigest()
    if digest != doc["checksum"]:
        raise ModelFormatError("checksum mismatch: model document is corrupted")
    try:
        params = HyperParams.from_dict(body["params"])
        est = params.estimator()._set_state(body["state"])
        columns = tuple(body["columns"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"invalid model body: {exc}") from None
    model = Model(params, est, columns)
    if model.fingerprint != body["fingerprint"]:
        raise ModelFormatError("fingerprint does not match the stored columns")
    return model


def save_model(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(model))


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        return deserialize(fh.read())

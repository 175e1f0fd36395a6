"""Binary classification metrics: confusion counts, P/R/F1, ROC-AUC, PR curves.

Conventions: a row is predicted positive when ``score >= threshold``;
precision is 0 when nothing is predicted positive; F1 is 0 when precision
and recall are both 0.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ClassificationMetrics:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict:
        return asdict(self)


def _check(labels, scores):
    labels = np.asarray(labels).reshape(-1)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if labels.size == 0:
        raise MetricError("empty inputs")
    if labels.shape != scores.shape:
        raise MetricError(f"{labels.size} labels but {scores.size} scores")
    if not np.all(np.isin(labels, (0, 1))):
        raise MetricError("labels must be 0/1")
    if not np.all(np.isfinite(scores)):
        raise MetricError("scores must be finite")
    return labels.astype(np.int8), scores


def prf_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def classification_metrics(labels, scores, threshold: float = 0.5) -> ClassificationMetrics:
    labels, scores = _check(labels, scores)
    pred = scores >= threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    return ClassificationMetrics(tp, fp, tn, fn, *prf_from_counts(tp, fp, fn))


def roc_auc(labels, scores) -> float:
    """Mann-Whitney estimate: P(pos > neg) + 0.5 * P(pos == neg)."""
    labels, scores = _check(labels, scores)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: labels contain a single class")
    # Midranks handle ties: each tie group gets the mean of its positions.
    uniq, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    midrank = upper - (counts - 1) / 2.0
    rank_sum = float(midrank[inverse][labels == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@dataclass(frozen=True)
class PRCurve:
    """Points ordered by decreasing threshold, so recall never decreases.

    The first point is the ``(recall=0, precision=1)`` endpoint, with an
    infinite threshold.
    """

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    auc: float

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))

    def to_csv(self) -> str:
        lines = ["threshold,recall,precision"]
        for t, r, p in zip(self.thresholds.tolist(), self.recall.tolist(),
                           self.precision.tolist()):
            lines.append(f"{t!r},{r!r},{p!r}")
        return "\n".join(lines) + "\n"


def pr_curve(labels, scores) -> PRCurve:
    labels, scores = _check(labels, scores)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise MetricError("PR curve undefined: labels contain a single class")
    order = np.argsort(-scores, kind="stable")
    s, l = scores[order], labels[order]
    tp_cum = np.cumsum(l)
    fp_cum = np.cumsum(1 - l)
    # Last position of each distinct score = all rows with score >= threshold.
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    tp = tp_cum[last].astype(np.float64)
    fp = fp_cum[last].astype(np.float64)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    thresholds = np.r_[np.inf, s[last]]
    precision = np.r_[1.0, precision]
    recall = np.r_[0.0, recall]
    auc = float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2.0))
    return PRCurve(thresholds, precision, recall, auc)

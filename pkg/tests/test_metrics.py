import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracle import pairwise_auc

from botdetect.metrics import MetricError, classification_metrics, pr_curve, roc_auc


def test_prf_formula():
    m = classification_metrics([1, 1, 1, 0, 0], [0.9, 0.8, 0.1, 0.7, 0.2])
    assert (m.tp, m.fp, m.fn, m.tn) == (2, 1, 1, 1)
    assert round(m.precision, 4) == round(m.recall, 4) == round(m.f1, 4) == 0.6667


def test_prf_perfect():
    m = classification_metrics([1, 0, 1], [1.0, 0.0, 0.9])
    assert m.precision == m.recall == m.f1 == 1.0


def test_prf_no_predicted_positives():
    m = classification_metrics([1, 0, 1], [0.1, 0.2, 0.3])
    assert m.precision == m.recall == m.f1 == 0.0


def test_threshold_is_inclusive():
    assert classification_metrics([1], [0.5]).tp == 1


@pytest.mark.parametrize("labels,scores,auc", [
    ([1, 1, 0, 0], [0.9, 0.8, 0.3, 0.2], 1.0),
    ([1, 0], [0.5, 0.5], 0.5),
    ([1, 0, 1, 0], [0.9, 0.1, 0.4, 0.6], 0.75),
])
def test_auc_examples(labels, scores, auc):
    assert roc_auc(labels, scores) == auc


def test_auc_single_class():
    with pytest.raises(MetricError, match="AUC undefined"):
        roc_auc([1, 1], [0.2, 0.3])


def test_empty_inputs():
    with pytest.raises(MetricError):
        classification_metrics([], [])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.7, 1.0])),
                min_size=2, max_size=30).filter(lambda p: len({l for l, _ in p}) == 2))
def test_auc_matches_pair_enumeration(pairs):
    labels, scores = zip(*pairs)
    assert roc_auc(labels, scores) == pytest.approx(pairwise_auc(labels, scores), abs=1e-12)


def test_pr_perfect_classifier():
    c = pr_curve([1, 1, 0, 0], [0.9, 0.8, 0.3, 0.2])
    assert (1.0, 1.0) in c.points()
    assert c.auc == 1.0


def test_pr_point_count_and_order():
    scores = [0.9, 0.9, 0.5, 0.4, 0.4, 0.1]
    c = pr_curve([1, 0, 1, 0, 1, 0], scores)
    assert len(c.points()) == len(set(scores)) + 1
    assert np.all(np.diff(c.recall) >= 0)
    assert c.recall[-1] == 1.0


def test_pr_random_scores_give_prevalence():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 2, 10_000)
    c = pr_curve(labels, rng.random(10_000))
    assert abs(c.auc - labels.mean()) <= 0.05


def test_pr_consistent_with_threshold_metrics():
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 2, 200)
    scores = np.round(rng.random(200), 2)
    m = classification_metrics(labels, scores, 0.5)
    c = pr_curve(labels, scores)
    i = np.flatnonzero(c.thresholds >= 0.5)[-1]
    assert (c.precision[i], c.recall[i]) == pytest.approx((m.precision, m.recall))


def test_pr_single_class():
    with pytest.raises(MetricError):
        pr_curve([0, 0], [0.1, 0.2])

import numpy as np
import pytest
from oracle import central_difference
from scipy.special import expit
from sklearn.base import clone

from botdetect.metrics import classification_metrics
from botdetect.models import (
    GradientBoosting,
    HyperParams,
    L1LogisticRegression,
    RandomForest,
    predict_proba,
    train,
)
from botdetect.models.api import (
    ModelFormatError,
    deserialize,
    feature_importance,
    grid_search,
    serialize,
)
from botdetect.models.base import logloss, logloss_gradient
from botdetect.models.logistic import logistic_loss_grad
from botdetect.models.tree import build_tree_random

XOR_X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
XOR_Y = np.array([0, 1, 1, 0])


def noisy_problem(seed=0, n=300, d=6, informative=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (X[:, informative] + 0.3 * rng.normal(size=n) > 0).astype(int)
    return X, y


def test_logreg_separable():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    y = np.array([0, 0, 1, 1])
    m = L1LogisticRegression(l1_strength=1e-4).fit(X, y)
    assert (m.predict(X) == y).all()


def test_boosting_xor():
    m = GradientBoosting(n_estimators=100, max_depth=3).fit(XOR_X, XOR_Y)
    assert classification_metrics(XOR_Y, m.positive_score(XOR_X)).f1 >= 0.99


def test_reference_boosting_loop_agrees_on_xor():
    # A depth-2 tree isolates each XOR point, so a naive loop can update points one by one.
    raw = np.zeros(4)
    for _ in range(100):
        resid = XOR_Y - expit(raw)
        raw += 0.05 * resid / np.maximum(expit(raw) * (1 - expit(raw)), 1e-12)
    ref = (expit(raw) >= 0.5).astype(int)
    ours = GradientBoosting(n_estimators=100, max_depth=3).fit(XOR_X, XOR_Y).predict(XOR_X)
    assert (ref == XOR_Y).all() and (ours == ref).all()


def test_logreg_zero_weights_score_half():
    m = L1LogisticRegression()._set_state(
        {"n_features": 2, "coef": [0, 0], "intercept": 0.0, "mean": [0, 0], "scale": [1, 1]})
    assert np.all(m.positive_score(np.ones((3, 2))) == 0.5)


def test_forest_unanimous_vote():
    X = np.r_[np.zeros((5, 2)), np.ones((5, 2))]
    y = np.r_[np.zeros(5), np.ones(5)].astype(int)
    m = RandomForest(n_estimators=7, bootstrap=False).fit(X, y)
    assert m.positive_score(np.ones((1, 2)))[0] == 1.0
    assert m.tree_votes(np.ones((1, 2)))[0] == 1.0


def test_boosting_zero_estimators_is_prior():
    X, y = noisy_problem()
    m = GradientBoosting(n_estimators=0).fit(X, y)
    p = y.mean()
    assert np.allclose(m.positive_score(X), expit(np.log(p / (1 - p))))


def test_importance_finds_the_informative_feature():
    X, y = noisy_problem(seed=3)
    for est in (RandomForest(n_estimators=30), GradientBoosting(n_estimators=30)):
        imp = est.fit(X, y).feature_importances_
        assert int(np.argmax(imp)) == 3
        assert abs(imp.sum() - 1.0) <= 1e-9


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, d = rng.integers(3, 15), rng.integers(1, 6)
        X, y = rng.normal(size=(n, d)), rng.integers(0, 2, n)
        sw = rng.uniform(0.5, 2.0, n)
        theta = rng.normal(size=d + 1)

        def f(t):
            return logistic_loss_grad(t[:d], t[d], X, y, sw)[0]

        _, gw, gb = logistic_loss_grad(theta[:d], theta[d], X, y, sw)
        num = central_difference(f, theta)
        np.testing.assert_allclose(np.r_[gw, gb], num, rtol=1e-5, atol=1e-9)


def test_boosting_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(20):
        raw, y = rng.normal(scale=3, size=8), rng.integers(0, 2, 8)
        num = np.array([central_difference(lambda r: logloss(r, y[i:i + 1]).sum(),
                                           raw[i:i + 1])[0] for i in range(8)])
        np.testing.assert_allclose(logloss_gradient(raw, y), num, rtol=1e-5, atol=1e-9)


def test_l1_sparsity_is_monotone():
    X, y = noisy_problem(seed=5, d=12)
    nnz = [np.count_nonzero(L1LogisticRegression(l1_strength=s).fit(X, y).coef_)
           for s in (1e-4, 1e-3, 1e-2, 5e-2, 2e-1)]
    assert all(a >= b for a, b in zip(nnz, nnz[1:]))
    assert nnz[0] > nnz[-1]


def test_logreg_converges_to_optimum():
    X, y = noisy_problem(seed=2)
    m = L1LogisticRegression(l1_strength=1e-2).fit(X, y)
    assert m.converged_


def test_tree_kernels_agree():
    X, y = noisy_problem(seed=4, n=200, d=10)
    XT = np.ascontiguousarray(X.T)
    target = y.astype(float)
    idx = np.sort(np.random.default_rng(0).integers(0, 200, 200))
    a = build_tree_random(XT, target, None, idx, np.random.default_rng(9), 3, presort=True)
    b = build_tree_random(XT, target, None, idx, np.random.default_rng(9), 3, presort=False)
    assert a.to_dict() == b.to_dict()


def test_forest_training_fit_is_perfect_without_bootstrap():
    X, y = noisy_problem(seed=6)
    m = RandomForest(n_estimators=5, bootstrap=False, max_features=None).fit(X, y)
    assert (m.predict(X) == y).all()


@pytest.mark.parametrize("family", ["logreg", "random_forest", "gradient_boosting"])
def test_serialization_round_trip_and_stability(family):
    X, y = noisy_problem(seed=7)
    params = HyperParams(family, n_trees=10, n_estimators=10)
    a, b = train(X, params, y), train(X, params, y)
    assert serialize(a) == serialize(b)
    back = deserialize(serialize(a))
    assert np.array_equal(predict_proba(back, X), predict_proba(a, X))
    assert feature_importance(back) == feature_importance(a)


def test_corrupted_model_is_rejected():
    X, y = noisy_problem()
    data = bytearray(serialize(train(X, HyperParams("random_forest", n_trees=3), y)))
    i = data.index(b'"threshold"') + 20
    data[i] = ord("7") if data[i] != ord("7") else ord("8")
    with pytest.raises(ModelFormatError):
        deserialize(bytes(data))


def test_grid_single_cell():
    X, y = noisy_problem()
    best, scores = grid_search(X, "logreg", {"l1_strength": [1e-3]}, k=3, y=y)
    assert best.l1_strength == 1e-3 and list(scores) == [best]


def test_grid_prefers_smaller_model_on_ties():
    X = np.r_[np.zeros((10, 1)), np.ones((10, 1))]
    y = np.r_[np.zeros(10), np.ones(10)].astype(int)
    best, scores = grid_search(X, "random_forest", {"n_trees": [20, 5]}, k=2, y=y)
    assert len(set(scores.values())) == 1 and best.n_trees == 5


def test_sklearn_clone():
    est = RandomForest(n_estimators=3, random_state=4)
    c = clone(est)
    assert c.get_params() == est.get_params()

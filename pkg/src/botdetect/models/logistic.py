from __future__ import annotations

import logging

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .._validation import check_X, check_Xy, class_sample_weight
from .base import BinaryClassifier, logloss, logloss_gradient

logger = logging.getLogger(__name__)


def logistic_loss_grad(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray,
                       sample_weight: np.ndarray | None = None):
    """Weighted mean logistic loss and its gradient in ``(w, b)``."""
    sw = np.ones(X.shape[0]) if sample_weight is None else sample_weight
    total = sw.sum()
    raw = X @ w + b
    loss = float((sw * logloss(raw, y)).sum() / total)
    g = sw * logloss_gradient(raw, y) / total
    return loss, X.T @ g, float(g.sum())


def l1_optimality_gap(grad_w: np.ndarray, grad_b: float, w: np.ndarray, l1: float) -> float:
    """Norm of the minimum-norm subgradient of ``loss + l1 * |w|_1``."""
    sub = np.where(w != 0, grad_w + l1 * np.sign(w),
                   np.sign(grad_w) * np.maximum(np.abs(grad_w) - l1, 0.0))
    return float(np.sqrt(np.sum(sub ** 2) + grad_b ** 2))


class L1LogisticRegression(BinaryClassifier):
    """Lasso-penalised logistic regression on z-scored features.

    Minimises ``mean(logloss) + l1_strength * |w|_1`` (bias unpenalised).
    Standardisation statistics come from the training matrix and are kept
    on the model. The problem is solved as a bound-constrained smooth one,
    ``w = w_pos - w_neg`` with both parts non-negative, by L-BFGS-B; weights
    pinned at the bound are exactly zero.
    """

    family = "logreg"

    def __init__(self, l1_strength=1e-3, tol=1e-6, max_iter=10_000, class_weight=None,
                 random_state=0):
        self.l1_strength = l1_strength
        self.tol = tol
        self.max_iter = max_iter
        self.class_weight = class_weight
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_Xy(X, y)
        if not self.l1_strength > 0:
            raise ValueError("l1_strength must be > 0")
        if len(np.unique(y)) < 2:
            raise ValueError("logistic regression needs both classes in the training labels")
        n, d = X.shape
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.scale_ = np.where(scale > 0, scale, 1.0)
        Z = (X - self.mean_) / self.scale_
        sw = class_sample_weight(y, self.class_weight)
        lam = float(self.l1_strength)

        def objective(theta):
            w = theta[:d] - theta[d:2 * d]
            loss, gw, gb = logistic_loss_grad(w, theta[-1], Z, y, sw)
            f = loss + lam * (theta[:d].sum() + theta[d:2 * d].sum())
            return f, np.concatenate([gw + lam, -gw + lam, [gb]])

        theta0 = np.zeros(2 * d + 1)
        bounds = [(0.0, None)] * (2 * d) + [(None, None)]
        res = minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": int(self.max_iter), "gtol": float(self.tol),
                                "ftol": 1e-15, "maxcor": 20})
        theta = res.x
        w = theta[:d] - theta[d:2 * d]
        w[(theta[:d] == 0) & (theta[d:2 * d] == 0)] = 0.0
        self.coef_ = w
        self.intercept_ = float(theta[-1])
        _, gw, gb = logistic_loss_grad(w, self.intercept_, Z, y, sw)
        self.optimality_gap_ = l1_optimality_gap(gw, gb, w, lam)
        self.n_iter_ = int(res.nit)
        self.converged_ = bool(self.optimality_gap_ <= self.tol)
        if not self.converged_:
            logger.info("L1 logistic regression stopped after %d iterations "
                        "(optimality gap %.3g, %s)", res.nit, self.optimality_gap_, res.message)
        self.n_features_in_ = d
        return self

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_X(X, self.n_features_in_)
        return ((X - self.mean_) / self.scale_) @ self.coef_ + self.intercept_

    def positive_score(self, X) -> np.ndarray:
        return expit(self.decision_function(X))

    @property
    def feature_importances_(self) -> np.ndarray:
        """|standardised weight|, normalised. Coefficient size is not impurity
        decrease; correlated features share or trade weight arbitrarily."""
        self._check_fitted()
        a = np.abs(self.coef_)
        s = a.sum()
        return a / s if s > 0 else np.full(a.size, 1.0 / a.size)

    def _get_state(self) -> dict:
        return {"n_features": self.n_features_in_, "coef": self.coef_.tolist(),
                "intercept": self.intercept_, "mean": self.mean_.tolist(),
                "scale": self.scale_.tolist()}

    def _set_state(self, state: dict):
        self.n_features_in_ = int(state["n_features"])
        self.coef_ = np.asarray(state["coef"], dtype=np.float64)
        self.intercept_ = float(state["intercept"])
        self.mean_ = np.asarray(state["mean"], dtype=np.float64)
        self.scale_ = np.asarray(state["scale"], dtype=np.float64)
        return self

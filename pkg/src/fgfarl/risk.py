"""Logistic harm-risk model: deterministic Newton training and scoring.

The binary label is harm = (reward < 0). The objective is the mean negative
log-likelihood plus an L2 penalty on all non-intercept weights; the intercept
(last dimension of the feature layout) is unpenalized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_X_y

from .data import EpisodeSet
from .features import FeatureSpec, Standardizer, design_matrix, fit_standardizer, phi
from .optim import minimize_newton


class RiskTrainingError(ValueError):
    pass


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _penalty_mask(dim: int) -> np.ndarray:
    mask = np.ones(dim)
    mask[-1] = 0.0  # intercept is the last dimension
    return mask


def logistic_loss_grad_hess(w, X, y, l2_lambda):
    """Mean NLL + (l2/2)*||w_nonintercept||^2 with gradient and Hessian."""
    n = X.shape[0]
    z = X @ w
    p = sigmoid(z)
    # log(1+exp(-|z|)) form is stable for large |z|
    nll = np.mean(np.logaddexp(0.0, z) - y * z)
    mask = _penalty_mask(len(w))
    loss = nll + 0.5 * l2_lambda * np.sum(mask * w * w)
    grad = X.T @ (p - y) / n + l2_lambda * mask * w
    s = p * (1.0 - p)
    hess = (X.T * s) @ X / n + l2_lambda * np.diag(mask)
    return loss, grad, hess


class L2LogisticRegression(BaseEstimator):
    """Binary logistic regression with an explicit intercept feature.

    sklearn-style estimator over plain arrays: the caller supplies the design
    matrix (whose last column is the constant intercept dimension). The L2
    penalty applies to the mean-NLL objective and skips the intercept.
    """

    def __init__(self, l2_lambda=1.0, tol=1e-8, max_iter=500):
        self.l2_lambda = l2_lambda
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        y = np.asarray(y, dtype=float)
        classes = np.unique(y)
        if len(classes) < 2:
            raise RiskTrainingError(
                "training data contains a single class (need both harm and "
                "no-harm steps)"
            )
        obj = lambda w: logistic_loss_grad_hess(w, X, y, self.l2_lambda)
        w0 = np.zeros(X.shape[1])
        self.coef_, self.loss_trace_, self.converged_ = minimize_newton(
            obj, w0, tol=self.tol, max_iter=self.max_iter
        )
        return self

    def predict_proba(self, X):
        X = check_array(X)
        p1 = sigmoid(X @ self.coef_)
        return np.column_stack([1.0 - p1, p1])


@dataclass(frozen=True)
class RiskModel:
    """Trained harm-risk model bundled with its feature pipeline."""

    weights: np.ndarray
    l2_lambda: float
    train_loss_trace: tuple
    feature_spec: FeatureSpec
    standardizer: Standardizer
    converged: bool = True

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "train_loss_trace", tuple(self.train_loss_trace))

    def to_json(self) -> str:
        return json.dumps(
            {
                "weights": self.weights.tolist(),
                "l2_lambda": self.l2_lambda,
                "feature_spec": self.feature_spec.to_dict(),
                "standardizer": self.standardizer.to_dict(),
                "converged": self.converged,
            },
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "RiskModel":
        d = json.loads(text)
        return cls(
            weights=np.array(d["weights"]),
            l2_lambda=d["l2_lambda"],
            train_loss_trace=(),
            feature_spec=FeatureSpec.from_dict(d["feature_spec"]),
            standardizer=Standardizer.from_dict(d["standardizer"]),
            converged=d.get("converged", True),
        )


def train_risk(
    train: EpisodeSet,
    spec: FeatureSpec,
    l2_lambda: float = 1.0,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> RiskModel:
    """Fit the logistic harm model on the train split."""
    std = fit_standardizer(train, spec)
    X = design_matrix(train, std, spec)
    y = train.harm_labels.astype(float)
    est = L2LogisticRegression(l2_lambda=l2_lambda, tol=tol, max_iter=max_iter).fit(
        X, y
    )
    return RiskModel(
        weights=est.coef_,
        l2_lambda=l2_lambda,
        train_loss_trace=est.loss_trace_,
        feature_spec=spec,
        standardizer=std,
        converged=est.converged_,
    )


def score(model: RiskModel, step, prev_reward: float) -> float:
    """Harm probability for a single step."""
    x = phi(step, prev_reward, model.standardizer, model.feature_spec)
    return float(sigmoid(x @ model.weights))


def score_dataset(model: RiskModel, data: EpisodeSet) -> np.ndarray:
    """Harm probabilities for every step, in canonical step order."""
    X = design_matrix(data, model.standardizer, model.feature_spec)
    return sigmoid(X @ model.weights)

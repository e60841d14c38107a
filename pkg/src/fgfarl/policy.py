"""Softmax-linear policies over state features.

One trainer covers behavior cloning, the group-reweighted fair variant, the
safe-set preference policy, and the behavior model used in importance ratios;
they differ only in the step mask and sample weights. The last action's
parameter row is pinned to zero (softmax gauge); probabilities are the
contract, not raw parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_X_y

from .data import N_ACTIONS, EpisodeSet
from .features import FeatureSpec, Standardizer, design_matrix, fit_standardizer, phi
from .optim import minimize_newton


class PolicyTrainingError(ValueError):
    pass


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by max subtraction."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def multinomial_loss_grad_hess(b_flat, X, actions, weights, l2_lambda):
    """Weighted mean cross-entropy + (l2/2)*||B_nonintercept||^2.

    ``b_flat`` holds the free (N_ACTIONS-1, d) parameter block; the last
    action's row is fixed at zero. The intercept column (last feature
    dimension) is unpenalized. Weights are normalized by their sum, so the
    objective is invariant to rescaling all weights.
    """
    n, d = X.shape
    A = N_ACTIONS
    B = b_flat.reshape(A - 1, d)
    logits = np.hstack([X @ B.T, np.zeros((n, 1))])
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    nll = lse - logits[np.arange(n), actions]
    wsum = weights.sum()
    wn = weights / wsum
    P = softmax(logits)  # (n, A)
    mask = np.ones(d)
    mask[-1] = 0.0
    loss = float(wn @ nll) + 0.5 * l2_lambda * np.sum((B * B) * mask)
    Y = np.zeros((n, A - 1))
    obs = actions < A - 1
    Y[np.arange(n)[obs], actions[obs]] = 1.0
    G = (P[:, : A - 1] - Y).T * wn  # (A-1, n)
    grad = G @ X + l2_lambda * B * mask
    # Hessian blocks: sum_i w_i (diag(p) - p p^T)_{ab} x_i x_i^T
    Pf = P[:, : A - 1]
    # W[a,b,i] = w_i (delta_ab p_ia - p_ia p_ib)
    W = -np.einsum("i,ia,ib->abi", wn, Pf, Pf)
    diag = np.einsum("i,ia->ai", wn, Pf)
    idx = np.arange(A - 1)
    W[idx, idx, :] += diag
    H = np.einsum("abi,id,ie->adbe", W, X, X).reshape((A - 1) * d, (A - 1) * d)
    pen = np.tile(mask, A - 1) * l2_lambda
    H += np.diag(pen)
    return loss, grad.ravel(), H


class SoftmaxRegression(BaseEstimator):
    """Multinomial logistic regression over a fixed 9-action catalog.

    sklearn-style estimator on plain arrays; the design matrix's last column
    must be the constant intercept dimension.
    """

    def __init__(self, l2_lambda=1.0, tol=1e-8, max_iter=500):
        self.l2_lambda = l2_lambda
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y)
        actions = np.asarray(y, dtype=int)
        if len(np.unique(actions)) < 2:
            raise PolicyTrainingError("training data contains a single action")
        n, d = X.shape
        if sample_weight is None:
            weights = np.ones(n)
        else:
            weights = np.asarray(sample_weight, dtype=float)
            if weights.shape != (n,) or np.any(weights <= 0):
                raise PolicyTrainingError("sample weights must be positive, one per step")
        obj = lambda b: multinomial_loss_grad_hess(
            b, X, actions, weights, self.l2_lambda
        )
        b0 = np.zeros((N_ACTIONS - 1) * d)
        b, self.loss_trace_, self.converged_ = minimize_newton(
            obj, b0, tol=self.tol, max_iter=self.max_iter
        )
        self.coef_ = np.vstack([b.reshape(N_ACTIONS - 1, d), np.zeros(d)])
        return self

    def predict_proba(self, X):
        X = check_array(X)
        return softmax(X @ self.coef_.T)


@dataclass(frozen=True)
class LinearPolicy:
    """Softmax-linear action distribution bundled with its feature pipeline."""

    theta: np.ndarray  # (N_ACTIONS, psi-dim)
    feature_spec: FeatureSpec
    standardizer: Standardizer
    training_mask_descriptor: str = "all"

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape[0] != N_ACTIONS:
            raise PolicyTrainingError(
                f"theta must have {N_ACTIONS} action rows, got {theta.shape}"
            )
        object.__setattr__(self, "theta", theta)

    def to_json(self) -> str:
        return json.dumps(
            {
                "theta": self.theta.tolist(),
                "feature_spec": self.feature_spec.to_dict(),
                "standardizer": self.standardizer.to_dict(),
                "mask": self.training_mask_descriptor,
            },
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "LinearPolicy":
        d = json.loads(text)
        return cls(
            theta=np.array(d["theta"]),
            feature_spec=FeatureSpec.from_dict(d["feature_spec"]),
            standardizer=Standardizer.from_dict(d["standardizer"]),
            training_mask_descriptor=d["mask"],
        )

    def with_descriptor(self, descriptor: str) -> "LinearPolicy":
        return LinearPolicy(
            self.theta, self.feature_spec, self.standardizer, descriptor
        )


@dataclass(frozen=True)
class SampleWeights:
    """Positive per-step weights normalized to mean 1."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if np.any(vals <= 0):
            raise PolicyTrainingError("sample weights must be positive")
        vals = vals / vals.mean()
        object.__setattr__(self, "values", vals)


def train_policy(
    data: EpisodeSet,
    spec: FeatureSpec,
    mask: np.ndarray = None,
    weights: SampleWeights = None,
    l2_lambda: float = 1.0,
    tol: float = 1e-8,
    max_iter: int = 500,
    standardizer: Standardizer = None,
    descriptor: str = "all",
) -> LinearPolicy:
    """Fit a softmax policy on the (optionally masked, weighted) steps.

    The standardizer defaults to one fitted on the full ``data`` argument;
    pass the train-split standardizer explicitly when training on subsets.
    """
    std = standardizer if standardizer is not None else fit_standardizer(data, spec)
    X = design_matrix(data, std, spec)
    actions = data.actions
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise PolicyTrainingError("empty training mask")
        X = X[mask]
        actions = actions[mask]
    w = weights.values if weights is not None else None
    est = SoftmaxRegression(l2_lambda=l2_lambda, tol=tol, max_iter=max_iter).fit(
        X, actions, sample_weight=w
    )
    return LinearPolicy(
        theta=est.coef_,
        feature_spec=spec,
        standardizer=std,
        training_mask_descriptor=descriptor,
    )


def fair_bc_weights(
    data: EpisodeSet, safe: np.ndarray, attribute: str
) -> SampleWeights:
    """Per-step weights proportional to 1 / P(safe | group), over safe steps.

    The safe fraction is measured per group on the same slice being trained
    on; weights are normalized to mean 1 and align with ``data``'s safe steps
    in canonical order.
    """
    safe = np.asarray(safe, dtype=bool)
    labels = data.group_labels(attribute)
    safe_labels = labels[safe]
    w = np.empty(safe_labels.shape[0], dtype=float)
    for cat in np.unique(safe_labels):
        in_cat = labels == cat
        p_safe = safe[in_cat].mean()
        w[safe_labels == cat] = 1.0 / p_safe
    return SampleWeights(w)


def act_probs(policy: LinearPolicy, step, prev_reward: float) -> np.ndarray:
    """Action probability vector for a single step."""
    psi = phi(step, prev_reward, policy.standardizer, policy.feature_spec)
    return softmax(policy.theta @ psi)


def act_probs_dataset(policy: LinearPolicy, data: EpisodeSet) -> np.ndarray:
    """Action probabilities for every step: (n_steps, N_ACTIONS)."""
    psi = design_matrix(data, policy.standardizer, policy.feature_spec)
    return softmax(psi @ policy.theta.T)


def top_coefficients(policy: LinearPolicy, k: int):
    """Per action, the k largest-|coefficient| features (intercept excluded),
    each action's selection sorted by coefficient descending.

    Returns a list of (action, feature_name, coefficient) rows.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    names = policy.feature_spec.raw_names
    rows = []
    for a in range(N_ACTIONS):
        coefs = policy.theta[a, : len(names)]
        order = np.argsort(-np.abs(coefs), kind="stable")[:k]
        chosen = sorted(order, key=lambda j: -coefs[j])
        for j in chosen:
            rows.append((a, names[j], float(coefs[j])))
    return rows

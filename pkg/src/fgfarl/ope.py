"""Off-policy value estimation: linear fitted-Q evaluation, step-wise doubly
robust estimates with a self-normalized variant, percentile bootstrap CIs,
and subgroup statistics with bootstrap p-values against the largest group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import N_ACTIONS, EpisodeSet
from .features import design_matrix
from .optim import derived_seed
from .policy import LinearPolicy, act_probs_dataset


class OPEError(ValueError):
    pass


@dataclass(frozen=True)
class FQEModel:
    beta: np.ndarray  # over [psi(s), onehot(a)] dimensions
    gamma: float
    iterations: int
    ridge: float
    policy_descriptor: str = ""

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        if not (0.0 < self.gamma < 1.0):
            raise OPEError(f"gamma must be in (0,1), got {self.gamma}")


@dataclass(frozen=True)
class ValueEstimate:
    point: float
    ci_lo: float
    ci_hi: float
    n_episodes: int
    estimator: str
    replicates: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "n_episodes": self.n_episodes,
            "estimator": self.estimator,
            "replicates": self.replicates,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class SubgroupStat:
    category: str
    n: int
    mean: float
    ci: tuple
    p_value: float

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "n": self.n,
            "mean": self.mean,
            "ci_lo": self.ci[0],
            "ci_hi": self.ci[1],
            "p_value": self.p_value,
        }


def _policy_parts(policy: LinearPolicy, data: EpisodeSet):
    """Per-step psi matrix and policy probabilities."""
    psi = design_matrix(data, policy.standardizer, policy.feature_spec)
    probs = act_probs_dataset(policy, data)
    return psi, probs


def fit_fqe(
    data: EpisodeSet,
    policy: LinearPolicy,
    gamma: float = 0.99,
    iterations: int = 50,
    ridge: float = 1e-6,
) -> FQEModel:
    """Iterative ridge regression to Bellman targets under the target policy.

    Q(s,a) = beta . [psi(s), onehot(a)]; targets are r + gamma * E_pi[Q(s',.)]
    with terminal steps using y = r; Q_0 = 0.
    """
    if data.n_episodes == 0:
        raise OPEError("empty dataset")
    if iterations < 1:
        raise OPEError("iterations must be >= 1")
    psi, probs = _policy_parts(policy, data)
    n, d_psi = psi.shape
    onehots = np.zeros((n, N_ACTIONS))
    onehots[np.arange(n), data.actions] = 1.0
    X = np.hstack([psi, onehots])
    d = d_psi + N_ACTIONS
    rewards = data.rewards
    terminal = data.terminal_mask
    nonterm = ~terminal
    # s_{t+1} of step i is step i+1 within the same episode (canonical order)
    next_idx = np.where(nonterm, np.arange(n) + 1, 0)
    gram = X.T @ X + ridge * np.eye(d)
    try:
        gram_inv_factor = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise OPEError(
            "singular normal equations; increase the ridge parameter"
        ) from None
    beta = np.zeros(d)
    for _ in range(iterations):
        # V(s') = psi(s') . beta_psi + pi(.|s') . beta_a
        v = psi @ beta[:d_psi] + probs @ beta[d_psi:]
        y = rewards + gamma * np.where(nonterm, v[next_idx], 0.0)
        rhs = X.T @ y
        z = np.linalg.solve(gram_inv_factor, rhs)
        beta = np.linalg.solve(gram_inv_factor.T, z)
    return FQEModel(
        beta=beta,
        gamma=gamma,
        iterations=iterations,
        ridge=ridge,
        policy_descriptor=policy.training_mask_descriptor,
    )


def state_values(fqe: FQEModel, policy: LinearPolicy, data: EpisodeSet) -> np.ndarray:
    """V(s) = E_{a~pi}[Q(s,a)] per step."""
    psi, probs = _policy_parts(policy, data)
    d_psi = psi.shape[1]
    return psi @ fqe.beta[:d_psi] + probs @ fqe.beta[d_psi:]


def v0(fqe: FQEModel, data: EpisodeSet, policy: LinearPolicy) -> float:
    """Mean start-state value over episodes."""
    v = state_values(fqe, policy, data)
    return float(np.mean(v[data.first_step_index]))


def dr_value(
    data: EpisodeSet,
    policy: LinearPolicy,
    mu: LinearPolicy,
    fqe: FQEModel,
    gamma: float = 0.99,
    rho_max: float = 10.0,
    self_normalized: bool = False,
) -> np.ndarray:
    """Step-wise doubly robust per-episode value estimates.

    DR_ep = V(s_0) + sum_t gamma^t w_t (r_t + gamma V(s_{t+1}) - Q(s_t, a_t)),
    where w_t is the cumulative product of per-step clipped ratios
    min(pi/mu, rho_max) and V at terminal successors is 0. The
    self-normalized variant divides each timestep's cumulative ratios by
    their cross-episode mean before use.
    """
    n = data.n_steps
    psi, probs_pi = _policy_parts(policy, data)
    probs_mu = act_probs_dataset(mu, data)
    d_psi = psi.shape[1]
    a = data.actions
    rows = np.arange(n)
    ratio = probs_pi[rows, a] / probs_mu[rows, a]
    if np.isfinite(rho_max):
        ratio = np.minimum(ratio, rho_max)
    v_hat = psi @ fqe.beta[:d_psi] + probs_pi @ fqe.beta[d_psi:]
    q_hat = psi @ fqe.beta[:d_psi] + fqe.beta[d_psi:][a]
    terminal = data.terminal_mask
    v_next = np.where(terminal, 0.0, np.roll(v_hat, -1))
    rewards = data.rewards
    t = data.times
    ep_idx = data.episode_index
    # cumulative ratios within episodes
    cum = np.empty(n)
    pos = 0
    for ep in data.episodes:
        ln = len(ep)
        cum[pos : pos + ln] = np.cumprod(ratio[pos : pos + ln])
        pos += ln
    if self_normalized:
        norm = np.ones(n)
        for tv in np.unique(t):
            sel = t == tv
            m = cum[sel].mean()
            if m > 0:
                norm[sel] = m
        cum = cum / norm
    corr = (gamma**t) * cum * (rewards + gamma * v_next - q_hat)
    n_ep = data.n_episodes
    dr = np.bincount(ep_idx, weights=corr, minlength=n_ep)
    dr += v_hat[data.first_step_index]
    return dr


def discounted_returns(data: EpisodeSet, gamma: float) -> np.ndarray:
    """Per-episode discounted return sum_t gamma^t r_t."""
    contrib = (gamma ** data.times) * data.rewards
    return np.bincount(data.episode_index, weights=contrib, minlength=data.n_episodes)


def _replicate_means(values: np.ndarray, replicates: int, seed: int) -> np.ndarray:
    """Bootstrap replicate means; each replicate draws its RNG from a seed
    derived via a fixed scrambler, so results are order-independent."""
    n = len(values)
    means = np.empty(replicates)
    for b in range(replicates):
        rng = np.random.default_rng(derived_seed(seed, b))
        means[b] = values[rng.integers(0, n, size=n)].mean()
    return means


def bootstrap_ci(
    values,
    replicates: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    estimator: str = "dr",
) -> ValueEstimate:
    """Percentile bootstrap interval for the mean of episode-level values."""
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        raise OPEError("need at least 2 episodes for a bootstrap interval")
    if replicates < 100:
        raise OPEError("need at least 100 bootstrap replicates")
    means = _replicate_means(values, replicates, seed)
    lo = float(np.quantile(means, (1.0 - level) / 2.0))
    hi = float(np.quantile(means, 1.0 - (1.0 - level) / 2.0))
    return ValueEstimate(
        point=float(values.mean()),
        ci_lo=lo,
        ci_hi=hi,
        n_episodes=len(values),
        estimator=estimator,
        replicates=replicates,
        seed=seed,
    )


def subgroup_stats(
    data: EpisodeSet,
    attribute: str,
    per_episode_values,
    replicates: int = 1000,
    level: float = 0.95,
    seed: int = 0,
):
    """Per-category n, mean, bootstrap CI, and two-sided bootstrap p-value of
    the mean difference against the largest-n category (whose own p-value is
    1 by convention). The p-value is twice the smaller tail fraction of
    replicate differences, capped at 1.
    """
    values = np.asarray(per_episode_values, dtype=float)
    if len(values) != data.n_episodes:
        raise OPEError("per-episode values must align with episodes")
    labels = data.episode_group_labels(attribute)
    cats = sorted(set(labels))
    counts = {c: int(np.sum(labels == c)) for c in cats}
    reference = max(cats, key=lambda c: (counts[c], c))
    ref_vals = values[labels == reference]
    stats = []
    for i, cat in enumerate(cats):
        vals = values[labels == cat]
        est = bootstrap_ci(
            vals, replicates, level, derived_seed(seed, i), estimator="subgroup"
        )
        if cat == reference:
            p = 1.0
        else:
            diffs = _replicate_means(
                vals, replicates, derived_seed(seed, 1000 + i)
            ) - _replicate_means(ref_vals, replicates, derived_seed(seed, 2000 + i))
            p = min(1.0, 2.0 * min(np.mean(diffs <= 0.0), np.mean(diffs >= 0.0)))
        stats.append(
            SubgroupStat(
                category=cat,
                n=counts[cat],
                mean=est.point,
                ci=(est.ci_lo, est.ci_hi),
                p_value=float(p),
            )
        )
    return stats

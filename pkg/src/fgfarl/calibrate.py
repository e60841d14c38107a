"""Conformal safety thresholds: a global quantile threshold plus per-group
thresholds in coverage mode (equal coverage) or harm mode (maximize coverage
under a harm-rate cap), with small-group fallback to the global threshold.

The safe set always uses a strict inequality: score < tau.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .data import EpisodeSet
from .risk import RiskModel, score_dataset

COVERAGE = "coverage"
HARM = "harm"


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class GroupThreshold:
    tau: float
    n: int
    fallback: bool
    coverage_hat: float
    harm_hat: float


@dataclass(frozen=True)
class ThresholdTable:
    attribute: str
    mode: str
    alpha: float
    epsilon: float
    global_tau: float
    h_bar: float
    per_group: dict  # category -> GroupThreshold
    min_group_n: int

    def tau_for(self, category) -> float:
        entry = self.per_group.get(category)
        return entry.tau if entry is not None else self.global_tau

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "mode": self.mode,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "global_tau": self.global_tau,
            "h_bar": self.h_bar,
            "min_group_n": self.min_group_n,
            "groups": {
                str(cat): {
                    "tau": g.tau,
                    "n": g.n,
                    "fallback": g.fallback,
                    "coverage": g.coverage_hat,
                    "harm": g.harm_hat,
                }
                for cat, g in self.per_group.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdTable":
        return cls(
            attribute=d["attribute"],
            mode=d["mode"],
            alpha=d["alpha"],
            epsilon=d["epsilon"],
            global_tau=d["global_tau"],
            h_bar=d["h_bar"],
            min_group_n=d["min_group_n"],
            per_group={
                cat: GroupThreshold(
                    tau=g["tau"],
                    n=g["n"],
                    fallback=g["fallback"],
                    coverage_hat=g["coverage"],
                    harm_hat=g["harm"],
                )
                for cat, g in d["groups"].items()
            },
        )


@dataclass(frozen=True)
class CoverageBound:
    """DKW deviation bound plus a Wilson interval for an observed proportion."""

    n: int
    delta: float
    dkw_epsilon: float
    wilson_interval: tuple


def global_threshold(calib_scores, alpha: float) -> float:
    """Empirical upper quantile: the ceil((1-alpha)*n)-th smallest score.

    This is the right-continuous inf convention
    tau = inf{t : F_hat(t) >= 1 - alpha}.
    """
    scores = np.sort(np.asarray(calib_scores, dtype=float))
    n = scores.size
    if n == 0:
        raise CalibrationError("empty calibration scores")
    if not (0.0 < alpha < 1.0):
        raise CalibrationError(f"alpha must be in (0,1), got {alpha}")
    k = int(math.ceil((1.0 - alpha) * n))
    k = min(max(k, 1), n)
    return float(scores[k - 1])


def _diagnostics(scores, harms, tau):
    safe = scores < tau
    cov = float(np.mean(safe)) if scores.size else 0.0
    harm = float(np.mean(harms[safe])) if safe.any() else 0.0
    return cov, harm


def _harm_mode_tau(scores, harms, cap):
    """Largest candidate threshold whose non-empty safe set respects the cap.

    Candidates are the unique observed scores plus a sentinel strictly above
    the max (the empirical harm rate is piecewise constant between observed
    scores). Returns None when no candidate with a non-empty safe set is
    feasible.
    """
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    h = harms[order].astype(float)
    uniq, first_idx = np.unique(s, return_index=True)
    cum_harm = np.concatenate(([0.0], np.cumsum(h)))
    # candidate = uniq[j]: safe count is first_idx[j] (scores strictly below)
    best = None
    for j in range(len(uniq)):
        n_safe = first_idx[j]
        if n_safe == 0:
            continue
        if cum_harm[n_safe] / n_safe <= cap:
            best = float(uniq[j])
    sentinel = float(np.nextafter(s[-1], np.inf))
    if len(s) > 0 and np.sum(h) / len(s) <= cap:
        best = sentinel
    return best


def coverage_mode_thresholds(
    calib: EpisodeSet,
    model: RiskModel,
    attribute: str,
    alpha: float,
    min_group_n: int = 200,
) -> ThresholdTable:
    """Per-group (1-alpha) quantile thresholds with small-group fallback."""
    if calib.n_steps == 0:
        raise CalibrationError("empty calibration slice")
    scores = score_dataset(model, calib)
    harms = calib.harm_labels
    labels = calib.group_labels(attribute)
    g_tau = global_threshold(scores, alpha)
    h_bar = _diagnostics(scores, harms, g_tau)[1]
    per_group = {}
    for cat in sorted(calib.attribute_catalog[attribute]):
        mask = labels == cat
        n_g = int(mask.sum())
        if n_g < min_group_n:
            tau_g, fallback = g_tau, True
        else:
            tau_g, fallback = global_threshold(scores[mask], alpha), False
        cov, harm = _diagnostics(scores[mask], harms[mask], tau_g)
        per_group[cat] = GroupThreshold(tau_g, n_g, fallback, cov, harm)
    return ThresholdTable(
        attribute=attribute,
        mode=COVERAGE,
        alpha=alpha,
        epsilon=0.0,
        global_tau=g_tau,
        h_bar=h_bar,
        per_group=per_group,
        min_group_n=min_group_n,
    )


def harm_mode_thresholds(
    calib: EpisodeSet,
    model: RiskModel,
    attribute: str,
    alpha: float,
    epsilon: float,
    min_group_n: int = 200,
) -> ThresholdTable:
    """Coverage-maximizing per-group thresholds under the harm cap.

    The global harm target h_bar is the harm rate among calibration states
    below the global threshold; each group takes the largest threshold whose
    safe-set harm rate stays within h_bar + epsilon. Small groups and
    infeasible groups fall back to the global threshold.
    """
    if calib.n_steps == 0:
        raise CalibrationError("empty calibration slice")
    if epsilon < 0:
        raise CalibrationError("epsilon must be nonnegative")
    scores = score_dataset(model, calib)
    harms = calib.harm_labels
    labels = calib.group_labels(attribute)
    g_tau = global_threshold(scores, alpha)
    h_bar = _diagnostics(scores, harms, g_tau)[1]
    cap = h_bar + epsilon
    per_group = {}
    for cat in sorted(calib.attribute_catalog[attribute]):
        mask = labels == cat
        n_g = int(mask.sum())
        if n_g < min_group_n:
            tau_g, fallback = g_tau, True
        else:
            tau_g = _harm_mode_tau(scores[mask], harms[mask], cap)
            fallback = tau_g is None
            if fallback:
                tau_g = g_tau
        cov, harm = _diagnostics(scores[mask], harms[mask], tau_g)
        per_group[cat] = GroupThreshold(tau_g, n_g, fallback, cov, harm)
    return ThresholdTable(
        attribute=attribute,
        mode=HARM,
        alpha=alpha,
        epsilon=epsilon,
        global_tau=g_tau,
        h_bar=h_bar,
        per_group=per_group,
        min_group_n=min_group_n,
    )


def global_mode_table(
    calib: EpisodeSet,
    model: RiskModel,
    attribute: str,
    alpha: float,
    min_group_n: int = 200,
) -> ThresholdTable:
    """Single global threshold applied to every group (the global-safety
    baseline); per-group diagnostics are still reported."""
    if calib.n_steps == 0:
        raise CalibrationError("empty calibration slice")
    scores = score_dataset(model, calib)
    harms = calib.harm_labels
    labels = calib.group_labels(attribute)
    g_tau = global_threshold(scores, alpha)
    h_bar = _diagnostics(scores, harms, g_tau)[1]
    per_group = {}
    for cat in sorted(calib.attribute_catalog[attribute]):
        mask = labels == cat
        cov, harm = _diagnostics(scores[mask], harms[mask], g_tau)
        per_group[cat] = GroupThreshold(g_tau, int(mask.sum()), False, cov, harm)
    return ThresholdTable(
        attribute=attribute,
        mode="global",
        alpha=alpha,
        epsilon=0.0,
        global_tau=g_tau,
        h_bar=h_bar,
        per_group=per_group,
        min_group_n=min_group_n,
    )


def dkw_bound(n: int, delta: float, observed_proportion: float = None) -> CoverageBound:
    """Finite-sample CDF deviation eps_n(delta) = sqrt(ln(2/delta) / (2n)).

    When an observed proportion is supplied, a Wilson score interval at level
    1 - delta is attached for reporting empirical coverage uncertainty.
    """
    if n < 1:
        raise CalibrationError("n must be >= 1")
    if not (0.0 < delta < 1.0):
        raise CalibrationError("delta must be in (0,1)")
    eps = math.sqrt(math.log(2.0 / delta) / (2.0 * n))
    interval = (0.0, 1.0)
    if observed_proportion is not None:
        p = float(observed_proportion)
        z = float(ndtri(1.0 - delta / 2.0))
        denom = 1.0 + z * z / n
        center = (p + z * z / (2 * n)) / denom
        half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
        interval = (max(0.0, center - half), min(1.0, center + half))
    return CoverageBound(n=n, delta=delta, dkw_epsilon=eps, wilson_interval=interval)


def safe_mask(data: EpisodeSet, model: RiskModel, table: ThresholdTable) -> np.ndarray:
    """Per-step safety mask: score strictly below the step's group threshold.

    Categories unseen at calibration time use the global threshold.
    """
    scores = score_dataset(model, data)
    labels = data.group_labels(table.attribute)
    taus = np.array([table.tau_for(cat) for cat in labels], dtype=float)
    return scores < taus

"""Deterministic feature maps for risk scoring, policy logits, and FQE.

The state map builds [t?, prev_reward?, selected state features...] followed
by a constant intercept dimension. Missing state features are imputed with
train-split means; optional standardization uses train-split mean/scale.
The state-action map appends a one-hot of the discrete action.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import N_ACTIONS, EpisodeSet, TrajectoryStep

INTERCEPT_NAME = "intercept"


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    selected_state_features: tuple = ()
    include_time: bool = True
    include_prev_reward: bool = True
    standardize: bool = True

    def __post_init__(self):
        feats = tuple(str(f) for f in self.selected_state_features)
        if len(set(feats)) != len(feats):
            raise FeatureError("duplicate state feature names")
        object.__setattr__(self, "selected_state_features", feats)

    @property
    def raw_names(self) -> tuple:
        """Names of the non-intercept dimensions, in vector layout order."""
        names = []
        if self.include_time:
            names.append("t")
        if self.include_prev_reward:
            names.append("prev_reward")
        names.extend(self.selected_state_features)
        return tuple(names)

    @property
    def names(self) -> tuple:
        return self.raw_names + (INTERCEPT_NAME,)

    @property
    def dim(self) -> int:
        """Output dimension including the intercept."""
        return len(self.raw_names) + 1

    def to_dict(self) -> dict:
        return {
            "selected_state_features": list(self.selected_state_features),
            "include_time": self.include_time,
            "include_prev_reward": self.include_prev_reward,
            "standardize": self.standardize,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        return cls(
            selected_state_features=tuple(d["selected_state_features"]),
            include_time=bool(d["include_time"]),
            include_prev_reward=bool(d["include_prev_reward"]),
            standardize=bool(d["standardize"]),
        )


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension train statistics: mean, scale, and imputation values.

    Zero-variance dimensions get scale 1 so the layout stays stable. Fit only
    on the train split.
    """

    mean: np.ndarray
    scale: np.ndarray
    impute_value: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))
        object.__setattr__(
            self, "impute_value", np.asarray(self.impute_value, dtype=float)
        )
        if np.any(self.scale <= 0):
            raise FeatureError("standardizer scales must be positive")

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "impute_value": self.impute_value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(
            mean=np.array(d["mean"]),
            scale=np.array(d["scale"]),
            impute_value=np.array(d["impute_value"]),
        )


def _raw_columns(data: EpisodeSet, spec: FeatureSpec):
    """Raw (unimputed) columns and presence masks for non-intercept dims."""
    n = data.n_steps
    k = len(spec.raw_names)
    raw = np.zeros((n, k), dtype=float)
    present = np.ones((n, k), dtype=bool)
    col = 0
    if spec.include_time:
        raw[:, col] = data.times
        col += 1
    if spec.include_prev_reward:
        raw[:, col] = data.prev_rewards
        col += 1
    for j, name in enumerate(spec.selected_state_features):
        cj = col + j
        for i, step in enumerate(data.steps()):
            v = step.state_features.get(name)
            if v is None:
                present[i, cj] = False
            else:
                raw[i, cj] = v
    return raw, present


def fit_standardizer(train: EpisodeSet, spec: FeatureSpec) -> Standardizer:
    """Compute per-dimension mean/scale/imputation over all train steps.

    Missing features are excluded from their dimension's statistics;
    population (not sample) standard deviation is used.
    """
    if train.n_steps == 0:
        raise FeatureError("cannot fit a standardizer on an empty train split")
    raw, present = _raw_columns(train, spec)
    k = raw.shape[1]
    mean = np.zeros(k)
    scale = np.ones(k)
    for j in range(k):
        vals = raw[present[:, j], j]
        if vals.size == 0:
            raise FeatureError(
                f"feature '{spec.raw_names[j]}' absent from every train step"
            )
        mean[j] = vals.mean()
        sd = vals.std()  # population std
        scale[j] = sd if sd > 0 else 1.0
    return Standardizer(mean=mean, scale=scale, impute_value=mean.copy())


def design_matrix(data: EpisodeSet, std: Standardizer, spec: FeatureSpec) -> np.ndarray:
    """State feature matrix, one row per step in canonical order.

    Layout: [t?, prev_reward?, selected features..., 1]. Missing features are
    imputed with train means before optional standardization; the intercept
    is never standardized.
    """
    raw, present = _raw_columns(data, spec)
    raw = np.where(present, raw, std.impute_value)
    if spec.standardize:
        raw = (raw - std.mean) / std.scale
    return np.hstack([raw, np.ones((raw.shape[0], 1))])


def phi(
    step: TrajectoryStep,
    prev_reward: float,
    std: Standardizer,
    spec: FeatureSpec,
) -> np.ndarray:
    """Feature vector for a single step (pure function of its inputs)."""
    vals = []
    if spec.include_time:
        vals.append(float(step.t))
    if spec.include_prev_reward:
        vals.append(float(prev_reward))
    col = len(vals)
    for j, name in enumerate(spec.selected_state_features):
        v = step.state_features.get(name)
        vals.append(std.impute_value[col + j] if v is None else float(v))
    x = np.asarray(vals, dtype=float)
    if spec.standardize:
        x = (x - std.mean) / std.scale
    return np.concatenate([x, [1.0]])


def action_onehot(action: int) -> np.ndarray:
    if not (0 <= action < N_ACTIONS):
        raise FeatureError(f"action out of range: {action}")
    oh = np.zeros(N_ACTIONS)
    oh[action] = 1.0
    return oh


def phi_sa(
    step: TrajectoryStep,
    prev_reward: float,
    std: Standardizer,
    spec: FeatureSpec,
    action: int,
) -> np.ndarray:
    """State-action features: [psi(s), onehot(action)]."""
    return np.concatenate([phi(step, prev_reward, std, spec), action_onehot(action)])


def design_matrix_sa(
    data: EpisodeSet, std: Standardizer, spec: FeatureSpec
) -> np.ndarray:
    """State-action feature matrix for the logged actions."""
    psi = design_matrix(data, std, spec)
    onehots = np.zeros((data.n_steps, N_ACTIONS))
    onehots[np.arange(data.n_steps), data.actions] = 1.0
    return np.hstack([psi, onehots])

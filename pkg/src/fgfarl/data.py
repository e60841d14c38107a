"""Offline trajectory datasets: loading, validation, splitting, slicing.

A dataset is a collection of episodes; each episode is an ordered list of
steps carrying state features, a discrete action, a reward, and episode-
constant group attributes. Harm labels are always derived as reward < 0 and
never stored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Mapping

import numpy as np

N_ACTIONS = 9

_STEP_KEYS = {"episode_id", "t", "action_id", "reward", "state", "groups"}


class DatasetError(ValueError):
    """Raised on malformed or inconsistent trajectory data."""


@dataclass(frozen=True)
class TrajectoryStep:
    episode_id: str
    t: int
    action_id: int
    reward: float
    state_features: Mapping[str, float]
    groups: Mapping[str, str]

    def __post_init__(self):
        if not (0 <= self.action_id < N_ACTIONS):
            raise DatasetError(
                f"action out of range: action_id={self.action_id} "
                f"(episode {self.episode_id}, t={self.t})"
            )
        if self.t < 0:
            raise DatasetError(f"negative time index t={self.t}")

    @property
    def harm(self) -> bool:
        return self.reward < 0


@dataclass(frozen=True)
class EpisodeSet:
    """Immutable collection of episodes plus a group-attribute catalog.

    ``attribute_catalog`` maps attribute name -> {category: step count} and is
    always recomputed from the steps at construction.
    """

    episodes: tuple
    attribute_catalog: dict = field(default=None)

    def __post_init__(self):
        episodes = tuple(tuple(ep) for ep in self.episodes)
        object.__setattr__(self, "episodes", episodes)
        catalog: dict = {}
        for ep in episodes:
            keys = frozenset(ep[0].groups)
            vals = {k: ep[0].groups[k] for k in keys}
            prev_t = None
            for step in ep:
                if frozenset(step.groups) != keys or any(
                    step.groups[k] != vals[k] for k in keys
                ):
                    raise DatasetError(
                        f"inconsistent group keys within episode {step.episode_id}"
                    )
                if prev_t is not None and step.t <= prev_t:
                    raise DatasetError(
                        f"time indices not strictly increasing in episode "
                        f"{step.episode_id}"
                    )
                prev_t = step.t
            for attr, cat in vals.items():
                counts = catalog.setdefault(attr, {})
                counts[cat] = counts.get(cat, 0) + len(ep)
        object.__setattr__(self, "attribute_catalog", catalog)

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    @property
    def n_steps(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    def steps(self) -> Iterator[TrajectoryStep]:
        for ep in self.episodes:
            yield from ep

    # --- flat per-step arrays (canonical step order: episode order, then t) ---

    @cached_property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps()], dtype=float)

    @cached_property
    def actions(self) -> np.ndarray:
        return np.array([s.action_id for s in self.steps()], dtype=int)

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.steps()], dtype=int)

    @cached_property
    def harm_labels(self) -> np.ndarray:
        return self.rewards < 0

    @cached_property
    def episode_index(self) -> np.ndarray:
        """Episode ordinal for every step, in canonical step order."""
        idx = np.empty(self.n_steps, dtype=int)
        pos = 0
        for i, ep in enumerate(self.episodes):
            idx[pos : pos + len(ep)] = i
            pos += len(ep)
        return idx

    @cached_property
    def first_step_index(self) -> np.ndarray:
        lengths = np.array([len(ep) for ep in self.episodes], dtype=int)
        return np.concatenate(([0], np.cumsum(lengths)[:-1])) if len(lengths) else np.array([], dtype=int)

    @cached_property
    def terminal_mask(self) -> np.ndarray:
        """True at the last step of each episode."""
        mask = np.zeros(self.n_steps, dtype=bool)
        pos = 0
        for ep in self.episodes:
            pos += len(ep)
            mask[pos - 1] = True
        return mask

    @cached_property
    def prev_rewards(self) -> np.ndarray:
        """Previous step's reward within the episode; 0 at the first step."""
        out = np.empty(self.n_steps, dtype=float)
        pos = 0
        for ep in self.episodes:
            out[pos] = 0.0
            for j in range(1, len(ep)):
                out[pos + j] = ep[j - 1].reward
            pos += len(ep)
        return out

    def group_labels(self, attribute: str) -> np.ndarray:
        """Per-step category labels for one attribute."""
        if attribute not in self.attribute_catalog:
            raise DatasetError(f"unknown group attribute: {attribute}")
        return np.array([s.groups[attribute] for s in self.steps()], dtype=object)

    def episode_group_labels(self, attribute: str) -> np.ndarray:
        """Per-episode category labels (group attributes are episode-constant)."""
        if attribute not in self.attribute_catalog:
            raise DatasetError(f"unknown group attribute: {attribute}")
        return np.array([ep[0].groups[attribute] for ep in self.episodes], dtype=object)

    @cached_property
    def episodic_returns(self) -> np.ndarray:
        """Undiscounted sum of observed rewards per episode."""
        return np.array([sum(s.reward for s in ep) for ep in self.episodes], dtype=float)


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "by-episode"
    fractions: tuple = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("by-episode", "by-index"):
            raise DatasetError(f"unknown split mode: {self.mode}")
        fr = tuple(float(f) for f in self.fractions)
        object.__setattr__(self, "fractions", fr)
        if len(fr) != 3 or any(f <= 0 for f in fr):
            raise DatasetError("split fractions must be three positive numbers")
        if abs(sum(fr) - 1.0) > 1e-12:
            raise DatasetError(f"split fractions must sum to 1, got {sum(fr)}")


def _parse_step(record: dict, lineno: int) -> TrajectoryStep:
    if not isinstance(record, dict):
        raise DatasetError(f"line {lineno}: step record is not an object")
    keys = set(record)
    if keys != _STEP_KEYS:
        extra = keys - _STEP_KEYS
        missing = _STEP_KEYS - keys
        parts = []
        if missing:
            parts.append(f"missing keys {sorted(missing)}")
        if extra:
            parts.append(f"unknown keys {sorted(extra)}")
        raise DatasetError(f"line {lineno}: " + "; ".join(parts))
    try:
        return TrajectoryStep(
            episode_id=str(record["episode_id"]),
            t=int(record["t"]),
            action_id=int(record["action_id"]),
            reward=float(record["reward"]),
            state_features={str(k): float(v) for k, v in record["state"].items()},
            groups={str(k): str(v) for k, v in record["groups"].items()},
        )
    except DatasetError as exc:
        raise DatasetError(f"line {lineno}: {exc}") from None
    except (TypeError, ValueError, AttributeError) as exc:
        raise DatasetError(f"line {lineno}: malformed step record ({exc})") from None


def load_dataset(path, fmt: str = "jsonl") -> EpisodeSet:
    """Load a JSONL step file into a validated EpisodeSet.

    Steps are grouped by episode_id (first-appearance order) and sorted by t.
    """
    if fmt != "jsonl":
        raise DatasetError(f"unsupported format: {fmt}")
    by_episode: dict = {}
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            step = _parse_step(record, lineno)
            key = (step.episode_id, step.t)
            if key in seen:
                raise DatasetError(
                    f"line {lineno}: duplicate (episode_id, t) = {key}"
                )
            seen.add(key)
            by_episode.setdefault(step.episode_id, []).append(step)
    episodes = []
    for eid, steps in by_episode.items():
        steps.sort(key=lambda s: s.t)
        if steps[0].t != 0:
            raise DatasetError(f"episode {eid}: time indices must start at 0")
        episodes.append(tuple(steps))
    return EpisodeSet(episodes=tuple(episodes))


def write_dataset(data: EpisodeSet, path) -> None:
    """Write an EpisodeSet in the JSONL step format (round-trips with load)."""
    with open(path, "w", encoding="utf-8") as fh:
        for step in data.steps():
            fh.write(
                json.dumps(
                    {
                        "episode_id": step.episode_id,
                        "t": step.t,
                        "action_id": step.action_id,
                        "reward": step.reward,
                        "state": dict(step.state_features),
                        "groups": dict(step.groups),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def _partition_counts(n: int, fractions) -> list:
    counts = [int(round(f * n)) for f in fractions[:2]]
    counts.append(n - sum(counts))
    return counts


def split(data: EpisodeSet, spec: SplitSpec):
    """Partition a dataset into (train, calib, test).

    by-episode keeps episodes intact; by-index assigns individual steps by a
    seeded shuffle of global step indices (episode fragments keep their
    original time indices). Deterministic given the seed.
    """
    if data.n_episodes == 0:
        raise DatasetError("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    names = ("train", "calibration", "test")
    if spec.mode == "by-episode":
        order = rng.permutation(data.n_episodes)
        counts = _partition_counts(data.n_episodes, spec.fractions)
        parts = []
        start = 0
        for name, cnt in zip(names, counts):
            if cnt <= 0:
                raise DatasetError(f"{name} split is empty after rounding")
            chosen = sorted(order[start : start + cnt])
            parts.append(EpisodeSet(tuple(data.episodes[i] for i in chosen)))
            start += cnt
        return tuple(parts)
    # by-index
    all_steps = list(data.steps())
    order = rng.permutation(len(all_steps))
    counts = _partition_counts(len(all_steps), spec.fractions)
    parts = []
    start = 0
    episode_order = [ep[0].episode_id for ep in data.episodes]
    for name, cnt in zip(names, counts):
        if cnt <= 0:
            raise DatasetError(f"{name} split is empty after rounding")
        chosen = sorted(order[start : start + cnt])
        by_ep: dict = {}
        for i in chosen:
            by_ep.setdefault(all_steps[i].episode_id, []).append(all_steps[i])
        episodes = tuple(
            tuple(by_ep[eid]) for eid in episode_order if eid in by_ep
        )
        parts.append(EpisodeSet(episodes))
        start += cnt
    return tuple(parts)


def group_slice(data: EpisodeSet, attribute: str, category: str) -> EpisodeSet:
    """Episodes whose group attribute equals the given category.

    Unknown categories return an empty set; unknown attributes are an error.
    Episode structure is preserved (attributes are episode-constant).
    """
    if attribute not in data.attribute_catalog:
        raise DatasetError(f"unknown group attribute: {attribute}")
    return EpisodeSet(
        tuple(ep for ep in data.episodes if ep[0].groups[attribute] == category)
    )

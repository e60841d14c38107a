import numpy as np
import pytest

# one line per acceptance criterion, printed after the run (see the
# pytest_terminal_summary hook below)
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from fgfarl.data import EpisodeSet, TrajectoryStep
from fgfarl.features import FeatureSpec, Standardizer
from fgfarl.risk import RiskModel


def make_episode(eid, rewards, actions=None, features=None, groups=None, t0=0):
    """Build an episode from parallel per-step lists."""
    n = len(rewards)
    actions = actions if actions is not None else [0] * n
    features = features if features is not None else [{}] * n
    groups = groups or {}
    return tuple(
        TrajectoryStep(
            episode_id=eid,
            t=t0 + i,
            action_id=actions[i],
            reward=rewards[i],
            state_features=features[i],
            groups=groups,
        )
        for i in range(n)
    )


def scores_to_episodes(scores, harms, group_labels, attribute="g"):
    """Single-step episodes whose risk score under `identity_risk_model` is
    exactly the given score (the state carries the score's logit)."""
    episodes = []
    for i, (s, h, g) in enumerate(zip(scores, harms, group_labels)):
        logit = float(np.log(s / (1.0 - s)))
        episodes.append(
            make_episode(
                f"e{i:05d}",
                rewards=[-1.0 if h else 0.0],
                features=[{"z": logit}],
                groups={attribute: str(g)},
            )
        )
    return EpisodeSet(tuple(episodes))


@pytest.fixture
def identity_risk_model():
    """Risk model whose score equals sigmoid(state feature 'z')."""
    spec = FeatureSpec(
        selected_state_features=("z",),
        include_time=False,
        include_prev_reward=False,
        standardize=False,
    )
    std = Standardizer(mean=[0.0], scale=[1.0], impute_value=[0.0])
    return RiskModel(
        weights=np.array([1.0, 0.0]),
        l2_lambda=0.0,
        train_loss_trace=(),
        feature_spec=spec,
        standardizer=std,
    )

import numpy as np
import pytest

from fgfarl.data import EpisodeSet
from fgfarl.features import (
    FeatureError,
    FeatureSpec,
    Standardizer,
    design_matrix,
    design_matrix_sa,
    fit_standardizer,
    phi,
    phi_sa,
)

from conftest import make_episode


def flat_episodes(feature_rows, rewards=None):
    """One episode per row list; each row is that episode's single step."""
    rewards = rewards or [0.0] * len(feature_rows)
    return EpisodeSet(
        tuple(
            make_episode(f"e{i}", [rewards[i]], features=[row])
            for i, row in enumerate(feature_rows)
        )
    )


class TestStandardizer:
    def test_constant_feature(self):
        es = flat_episodes([{"a": 5.0}, {"a": 5.0}])
        spec = FeatureSpec(("a",), include_time=False, include_prev_reward=False)
        std = fit_standardizer(es, spec)
        assert std.mean[0] == 5.0
        assert std.scale[0] == 1.0  # zero-variance rule

    def test_two_point_population_std(self):
        es = flat_episodes([{"a": 0.0}, {"a": 2.0}])
        spec = FeatureSpec(("a",), include_time=False, include_prev_reward=False)
        std = fit_standardizer(es, spec)
        assert std.mean[0] == 1.0
        assert std.scale[0] == 1.0  # population std of {0,2}

    def test_two_pass_oracle(self):
        rng = np.random.default_rng(0)
        vals = rng.normal(3.0, 2.5, size=200)
        es = flat_episodes([{"a": float(v)} for v in vals])
        spec = FeatureSpec(("a",), include_time=False, include_prev_reward=False)
        std = fit_standardizer(es, spec)
        # independent two-pass mean/variance
        m = sum(vals) / len(vals)
        var = sum((v - m) ** 2 for v in vals) / len(vals)
        assert std.mean[0] == pytest.approx(m, abs=1e-12)
        assert std.scale[0] == pytest.approx(np.sqrt(var), abs=1e-12)

    def test_missing_excluded_from_mean(self):
        es = flat_episodes([{"a": 2.0}, {}, {"a": 4.0}])
        spec = FeatureSpec(("a",), include_time=False, include_prev_reward=False)
        std = fit_standardizer(es, spec)
        assert std.mean[0] == 3.0
        assert std.impute_value[0] == 3.0

    def test_feature_absent_everywhere(self):
        es = flat_episodes([{}, {}])
        spec = FeatureSpec(("ghost",), include_time=False, include_prev_reward=False)
        with pytest.raises(FeatureError, match="ghost"):
            fit_standardizer(es, spec)

    def test_scale_positive_invariant(self):
        with pytest.raises(FeatureError):
            Standardizer(mean=[0.0], scale=[0.0], impute_value=[0.0])


class TestPhi:
    def test_bare_layout(self):
        es = flat_episodes([{}])
        spec = FeatureSpec((), include_time=True, include_prev_reward=True, standardize=False)
        std = fit_standardizer(es, spec)
        step = es.episodes[0][0]
        assert list(phi(step, 0.0, std, spec)) == [0.0, 0.0, 1.0]

    def test_prev_reward_zero_at_start(self):
        es = EpisodeSet((make_episode("e", [-1.0, -2.0]),))
        assert es.prev_rewards[0] == 0.0
        assert es.prev_rewards[1] == -1.0

    def test_recomposition_oracle(self):
        rng = np.random.default_rng(1)
        rows = [{"a": float(rng.normal()), "b": float(rng.normal())} for _ in range(50)]
        es = flat_episodes(rows, rewards=[float(-rng.random()) for _ in range(50)])
        spec = FeatureSpec(("a", "b"), include_time=True, include_prev_reward=True)
        std = fit_standardizer(es, spec)
        X = design_matrix(es, std, spec)
        for i, step in enumerate(es.steps()):
            hand = np.array(
                [
                    (step.t - std.mean[0]) / std.scale[0],
                    (0.0 - std.mean[1]) / std.scale[1],  # single-step episodes
                    (step.state_features["a"] - std.mean[2]) / std.scale[2],
                    (step.state_features["b"] - std.mean[3]) / std.scale[3],
                    1.0,
                ]
            )
            assert np.array_equal(X[i], hand)
            assert np.array_equal(phi(step, 0.0, std, spec), hand)

    def test_determinism_bit_identical(self):
        es = flat_episodes([{"a": 0.123456}])
        spec = FeatureSpec(("a",))
        std = fit_standardizer(es, spec)
        step = es.episodes[0][0]
        a = phi(step, 0.0, std, spec)
        b = phi(step, 0.0, std, spec)
        assert np.array_equal(a, b)

    def test_train_split_standardized_moments(self):
        rng = np.random.default_rng(2)
        rows = [{"a": float(rng.normal(5, 3))} for _ in range(500)]
        es = flat_episodes(rows)
        spec = FeatureSpec(("a",), include_time=False, include_prev_reward=False)
        std = fit_standardizer(es, spec)
        X = design_matrix(es, std, spec)
        assert abs(X[:, 0].mean()) < 1e-9
        assert abs(X[:, 0].std() - 1.0) < 1e-9
        assert np.all(X[:, 1] == 1.0)

    def test_duplicate_feature_names_rejected(self):
        with pytest.raises(FeatureError):
            FeatureSpec(("a", "a"))


class TestPhiSA:
    def test_onehot_placement(self):
        es = flat_episodes([{"a": 1.0, "b": 2.0}])
        spec = FeatureSpec(("a", "b"), include_time=False, include_prev_reward=False, standardize=False)
        std = fit_standardizer(es, spec)
        step = es.episodes[0][0]
        v = phi_sa(step, 0.0, std, spec, 0)
        assert len(v) == 3 + 9
        assert list(v[3:]) == [1, 0, 0, 0, 0, 0, 0, 0, 0]

    def test_onehot_sums_to_one(self):
        es = flat_episodes([{}])
        spec = FeatureSpec((), include_time=False, include_prev_reward=False)
        std = fit_standardizer(es, spec)
        step = es.episodes[0][0]
        for a in range(9):
            assert phi_sa(step, 0.0, std, spec, a)[1:].sum() == 1.0

    def test_action_out_of_range(self):
        es = flat_episodes([{}])
        spec = FeatureSpec(())
        std = fit_standardizer(es, spec)
        with pytest.raises(FeatureError, match="action out of range"):
            phi_sa(es.episodes[0][0], 0.0, std, spec, 9)

    def test_dimension_audit(self):
        rng = np.random.default_rng(3)
        rows = [{"a": float(rng.normal())} for _ in range(30)]
        es = flat_episodes(rows)
        spec = FeatureSpec(("a",))
        std = fit_standardizer(es, spec)
        psi = design_matrix(es, std, spec)
        sa = design_matrix_sa(es, std, spec)
        assert sa.shape[1] == psi.shape[1] + 9
        assert np.array_equal(sa[:, : psi.shape[1]], psi)
        assert np.all(sa[:, psi.shape[1] :].sum(axis=1) == 1.0)

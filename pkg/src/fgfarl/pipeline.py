"""End-to-end batch pipeline: split -> risk -> thresholds -> policies ->
FQE/DR -> bootstrap + subgroup statistics -> report artifacts.

Every random draw derives from the run's master seed. All artifacts except
timings.json are byte-reproducible for a fixed config + seed.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import calibrate as cal
from . import ope, report, synthdata
from .data import EpisodeSet, SplitSpec, TrajectoryStep, load_dataset, split
from .features import FeatureSpec, fit_standardizer
from .optim import derived_seed
from .policy import fair_bc_weights, train_policy
from .risk import train_risk

POLICY_NAMES = ("fg_farl", "haco", "bc", "fair_bc")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class RunConfig:
    data_path: str = None
    generator: synthdata.GeneratorConfig = None
    split_mode: str = "by-episode"
    split_fractions: tuple = (0.7, 0.15, 0.15)
    risk_features: tuple = "auto"  # tuple of names or "auto"
    risk_include_time: bool = True
    risk_include_prev_reward: bool = True
    risk_standardize: bool = True
    risk_l2: float = 1.0
    policy_features: tuple = "auto"
    policy_include_time: bool = True
    policy_include_prev_reward: bool = True
    policy_standardize: bool = True
    policy_l2: float = 1.0
    attribute: str = None
    mode: str = "coverage"
    alpha: float = 0.10
    epsilon: float = 0.02
    min_group_n: int = 200
    gamma: float = 0.99
    fqe_iterations: int = 50
    fqe_ridge: float = 1e-6
    rho_max: float = 10.0
    self_normalized: bool = False
    bootstrap_replicates: int = 1000
    bootstrap_level: float = 0.95
    reward_norm: bool = False
    train_includes_calibration: bool = False
    seed: int = 0
    out_dir: str = "out"
    run_label: str = "run"

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"alpha must be in (0,1), got {self.alpha}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative")
        if self.min_group_n < 1:
            raise ConfigError("min_group_n must be >= 1")
        if not (0.0 < self.gamma < 1.0):
            raise ConfigError(f"gamma must be in (0,1), got {self.gamma}")
        if self.mode not in (cal.COVERAGE, cal.HARM):
            raise ConfigError(f"mode must be coverage or harm, got {self.mode}")
        if self.data_path is None and self.generator is None:
            raise ConfigError("either a data path or a generator config is required")

    def to_dict(self) -> dict:
        d = {
            "data_path": self.data_path,
            "generator": self.generator.to_dict() if self.generator else None,
            "split_mode": self.split_mode,
            "split_fractions": list(self.split_fractions),
            "risk_features": self.risk_features
            if self.risk_features == "auto"
            else list(self.risk_features),
            "risk_include_time": self.risk_include_time,
            "risk_include_prev_reward": self.risk_include_prev_reward,
            "risk_standardize": self.risk_standardize,
            "risk_l2": self.risk_l2,
            "policy_features": self.policy_features
            if self.policy_features == "auto"
            else list(self.policy_features),
            "policy_include_time": self.policy_include_time,
            "policy_include_prev_reward": self.policy_include_prev_reward,
            "policy_standardize": self.policy_standardize,
            "policy_l2": self.policy_l2,
            "attribute": self.attribute,
            "mode": self.mode,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "min_group_n": self.min_group_n,
            "gamma": self.gamma,
            "fqe_iterations": self.fqe_iterations,
            "fqe_ridge": self.fqe_ridge,
            "rho_max": self.rho_max,
            "self_normalized": self.self_normalized,
            "bootstrap_replicates": self.bootstrap_replicates,
            "bootstrap_level": self.bootstrap_level,
            "reward_norm": self.reward_norm,
            "train_includes_calibration": self.train_includes_calibration,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "run_label": self.run_label,
        }
        return d


def _feature_spec(features, include_time, include_prev_reward, standardize, cfg):
    if features == "auto":
        features = cfg.generator.covariate_names if cfg.generator else ()
    return FeatureSpec(
        selected_state_features=tuple(features),
        include_time=include_time,
        include_prev_reward=include_prev_reward,
        standardize=standardize,
    )


def _reward_norm_params(train: EpisodeSet):
    r = train.rewards
    r_min, r_max = float(r.min()), float(r.max())
    if r_max - r_min <= 0:
        return None
    return r_min, r_max


def _apply_reward_norm(data: EpisodeSet, params) -> EpisodeSet:
    """Affine map of rewards onto [-1, 0] using train-split extrema.

    Used only for value estimation; harm labels always come from raw rewards.
    """
    if params is None:
        return data
    r_min, r_max = params
    scale = r_max - r_min

    def tx(r):
        return (min(max(r, r_min), r_max) - r_max) / scale

    episodes = tuple(
        tuple(
            TrajectoryStep(
                episode_id=s.episode_id,
                t=s.t,
                action_id=s.action_id,
                reward=tx(s.reward),
                state_features=s.state_features,
                groups=s.groups,
            )
            for s in ep
        )
        for ep in data.episodes
    )
    return EpisodeSet(episodes)


class _Timer:
    def __init__(self):
        self.timings = {}

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.monotonic()

            def __exit__(self, exc_type, exc, tb):
                timer.timings[name] = time.monotonic() - self.t0
                if exc is not None and not isinstance(exc, StageError):
                    raise StageError(name, exc) from exc

        return _Ctx()


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def run_pipeline(cfg: RunConfig):
    """Execute the full pipeline; returns (out_dir, RunSummary).

    Artifacts are written as each stage completes, so a failing run leaves
    partial artifacts behind for debugging.
    """
    out_dir = os.path.join(cfg.out_dir, cfg.run_label)
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "config.json"), cfg.to_dict())
    timer = _Timer()

    with timer.stage("data"):
        if cfg.data_path is not None:
            dataset = load_dataset(cfg.data_path)
        else:
            dataset = synthdata.generate(replace(cfg.generator, seed=cfg.seed))
        attribute = cfg.attribute
        if attribute is None:
            if not dataset.attribute_catalog:
                raise ConfigError("dataset has no group attributes")
            attribute = sorted(dataset.attribute_catalog)[0]

    with timer.stage("split"):
        spec = SplitSpec(
            mode=cfg.split_mode,
            fractions=cfg.split_fractions,
            seed=derived_seed(cfg.seed, 1),
        )
        train, calib, test = split(dataset, spec)

    with timer.stage("risk"):
        risk_spec = _feature_spec(
            cfg.risk_features,
            cfg.risk_include_time,
            cfg.risk_include_prev_reward,
            cfg.risk_standardize,
            cfg,
        )
        model = train_risk(train, risk_spec, l2_lambda=cfg.risk_l2)
        with open(os.path.join(out_dir, "risk_model.json"), "w") as fh:
            fh.write(model.to_json() + "\n")

    with timer.stage("calibrate"):
        if cfg.mode == cal.COVERAGE:
            table = cal.coverage_mode_thresholds(
                calib, model, attribute, cfg.alpha, cfg.min_group_n
            )
        else:
            table = cal.harm_mode_thresholds(
                calib, model, attribute, cfg.alpha, cfg.epsilon, cfg.min_group_n
            )
        global_table = cal.global_mode_table(
            calib, model, attribute, cfg.alpha, cfg.min_group_n
        )
        with open(os.path.join(out_dir, "thresholds.json"), "w") as fh:
            fh.write(table.to_json() + "\n")
        with open(os.path.join(out_dir, "thresholds_global.json"), "w") as fh:
            fh.write(global_table.to_json() + "\n")

    with timer.stage("policy"):
        policy_spec = _feature_spec(
            cfg.policy_features,
            cfg.policy_include_time,
            cfg.policy_include_prev_reward,
            cfg.policy_standardize,
            cfg,
        )
        # thresholds come from calibration; policies train on the train split
        # (optionally the calibration slice too, for replication studies)
        if cfg.train_includes_calibration:
            policy_data = EpisodeSet(train.episodes + calib.episodes)
        else:
            policy_data = train
        psi_std = fit_standardizer(train, policy_spec)
        safe_group = cal.safe_mask(policy_data, model, table)
        safe_global = cal.safe_mask(policy_data, model, global_table)
        common = dict(l2_lambda=cfg.policy_l2, standardizer=psi_std)
        policies = {}
        policies["fg_farl"] = train_policy(
            policy_data, policy_spec, mask=safe_group, descriptor="safe-union", **common
        )
        policies["haco"] = train_policy(
            policy_data, policy_spec, mask=safe_global, descriptor="safe-global", **common
        )
        policies["bc"] = train_policy(
            policy_data, policy_spec, descriptor="all", **common
        )
        weights = fair_bc_weights(policy_data, safe_group, attribute)
        policies["fair_bc"] = train_policy(
            policy_data,
            policy_spec,
            mask=safe_group,
            weights=weights,
            descriptor="safe-union-reweighted",
            **common,
        )
        mu = policies["bc"].with_descriptor("behavior-model")
        for name, pol in policies.items():
            with open(os.path.join(out_dir, f"policy_{name}.json"), "w") as fh:
                fh.write(pol.to_json() + "\n")

    with timer.stage("fqe"):
        norm_params = _reward_norm_params(train) if cfg.reward_norm else None
        eval_data = _apply_reward_norm(test, norm_params)
        fqes = {
            name: ope.fit_fqe(
                eval_data, pol, cfg.gamma, cfg.fqe_iterations, cfg.fqe_ridge
            )
            for name, pol in policies.items()
        }
        v0s = {name: ope.v0(fqes[name], eval_data, pol) for name, pol in policies.items()}

    with timer.stage("dr"):
        dr_values = {
            name: ope.dr_value(
                eval_data,
                pol,
                mu,
                fqes[name],
                gamma=cfg.gamma,
                rho_max=cfg.rho_max,
                self_normalized=cfg.self_normalized,
            )
            for name, pol in policies.items()
        }
        dr_estimates = {
            name: ope.bootstrap_ci(
                vals,
                replicates=cfg.bootstrap_replicates,
                level=cfg.bootstrap_level,
                seed=derived_seed(cfg.seed, 2),
                estimator="dr-selfnorm" if cfg.self_normalized else "dr",
            )
            for name, vals in dr_values.items()
        }

    with timer.stage("stats"):
        subgroup_rows = []
        for name in ("fg_farl", "fair_bc"):
            stats = ope.subgroup_stats(
                eval_data,
                attribute,
                dr_values[name],
                replicates=cfg.bootstrap_replicates,
                level=cfg.bootstrap_level,
                seed=derived_seed(cfg.seed, 3),
            )
            for s in stats:
                subgroup_rows.append({**s.to_dict(), "policy": name})
        return_stats = ope.subgroup_stats(
            eval_data,
            attribute,
            test.episodic_returns,  # sums of raw observed rewards
            replicates=cfg.bootstrap_replicates,
            level=cfg.bootstrap_level,
            seed=derived_seed(cfg.seed, 4),
        )
        for s in return_stats:
            subgroup_rows.append({**s.to_dict(), "policy": "episodic-return"})
        wilson = {
            cat: cal.dkw_bound(g.n, 0.05, g.coverage_hat).wilson_interval
            for cat, g in table.per_group.items()
        }

    with timer.stage("report"):
        estimates_doc = {
            "v0": v0s,
            "dr": {name: est.to_dict() for name, est in dr_estimates.items()},
            "subgroups": subgroup_rows,
            "wilson": {str(k): list(v) for k, v in wilson.items()},
        }
        _write_json(os.path.join(out_dir, "estimates.json"), estimates_doc)
        summary = report.summarize(
            cfg.run_label, table, v0s, dr_estimates, timer.timings
        )
        report.write_summary(out_dir, summary)
        report.emit_plot_data(out_dir, table, wilson, subgroup_rows)
    return out_dir, summary


def run_sweep(cfg: RunConfig, alphas, epsilons):
    """One pipeline run per (alpha, epsilon) grid point with a shared seed.

    Per-run failures are recorded and the sweep continues. Returns
    (sensitivity rows, failures) and writes the sensitivity table into the
    sweep's base output directory.
    """
    if not alphas or not epsilons:
        raise ConfigError("sweep grids must be nonempty")
    summaries = []
    failures = {}
    for a in alphas:
        for e in epsilons:
            label = f"{cfg.run_label}_a{a:g}_e{e:g}"
            sub = replace(cfg, alpha=a, epsilon=e, run_label=label)
            try:
                _, summary = run_pipeline(sub)
                summaries.append(summary)
            except Exception as exc:  # recorded, sweep continues
                failures[label] = str(exc)
    rows = report.sensitivity_table(summaries) if summaries else []
    base = os.path.join(cfg.out_dir, cfg.run_label)
    os.makedirs(base, exist_ok=True)
    report.write_sensitivity_table(base, rows)
    if failures:
        _write_json(os.path.join(base, "failures.json"), failures)
    return rows, failures


def reemit_reports(run_dir: str) -> None:
    """Rebuild summary and CSV outputs from the serialized artifacts of a
    completed (or partially completed) run."""
    with open(os.path.join(run_dir, "thresholds.json")) as fh:
        table = cal.ThresholdTable.from_dict(json.load(fh))
    with open(os.path.join(run_dir, "estimates.json")) as fh:
        est = json.load(fh)
    with open(os.path.join(run_dir, "config.json")) as fh:
        cfg_doc = json.load(fh)
    dr_estimates = {
        name: ope.ValueEstimate(
            point=d["point"],
            ci_lo=d["ci_lo"],
            ci_hi=d["ci_hi"],
            n_episodes=d["n_episodes"],
            estimator=d["estimator"],
            replicates=d["replicates"],
            seed=d["seed"],
        )
        for name, d in est["dr"].items()
    }
    timings = {}
    timings_path = os.path.join(run_dir, "timings.json")
    if os.path.exists(timings_path):  # keep the original run's wall-clock record
        with open(timings_path) as fh:
            timings = json.load(fh)
    summary = report.summarize(
        cfg_doc["run_label"], table, est["v0"], dr_estimates, timings
    )
    report.write_summary(run_dir, summary)
    wilson = {k: tuple(v) for k, v in est["wilson"].items()}
    report.emit_plot_data(run_dir, table, wilson, est["subgroups"])

"""Per-group conformal safety calibration (FG-FARL) with safe-set policy
learning, fairness-aware baselines, and doubly robust off-policy evaluation.
"""

from .calibrate import (
    CoverageBound,
    ThresholdTable,
    coverage_mode_thresholds,
    dkw_bound,
    global_threshold,
    harm_mode_thresholds,
    safe_mask,
)
from .data import (
    EpisodeSet,
    SplitSpec,
    TrajectoryStep,
    group_slice,
    load_dataset,
    split,
    write_dataset,
)
from .features import FeatureSpec, Standardizer, fit_standardizer, phi, phi_sa
from .ope import FQEModel, bootstrap_ci, dr_value, fit_fqe, subgroup_stats, v0
from .pipeline import RunConfig, run_pipeline, run_sweep
from .policy import LinearPolicy, act_probs, fair_bc_weights, top_coefficients, train_policy
from .risk import RiskModel, score, score_dataset, train_risk
from .synthdata import GeneratorConfig, GroupAttributeSpec, generate, true_values

__version__ = "0.1.0"

__all__ = [
    "CoverageBound",
    "EpisodeSet",
    "FQEModel",
    "FeatureSpec",
    "GeneratorConfig",
    "GroupAttributeSpec",
    "LinearPolicy",
    "RiskModel",
    "RunConfig",
    "SplitSpec",
    "Standardizer",
    "ThresholdTable",
    "TrajectoryStep",
    "act_probs",
    "bootstrap_ci",
    "coverage_mode_thresholds",
    "dkw_bound",
    "dr_value",
    "fair_bc_weights",
    "fit_fqe",
    "fit_standardizer",
    "generate",
    "global_threshold",
    "group_slice",
    "harm_mode_thresholds",
    "load_dataset",
    "phi",
    "phi_sa",
    "run_pipeline",
    "run_sweep",
    "safe_mask",
    "score",
    "score_dataset",
    "split",
    "subgroup_stats",
    "top_coefficients",
    "train_policy",
    "train_risk",
    "true_values",
    "v0",
    "write_dataset",
]

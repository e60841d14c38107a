"""Batch command-line interface.

Subcommands: synth (generate a dataset), run (end-to-end pipeline), sweep
(alpha/epsilon grid), report (re-emit outputs from run artifacts). Config
files are flat key-value text with dotted keys; CLI flags override file
values. Exit codes: 0 success, 1 config error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import synthdata
from .data import write_dataset
from .pipeline import ConfigError, RunConfig, StageError, reemit_reports, run_pipeline, run_sweep

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def parse_config_file(path) -> dict:
    """Flat ``dotted.key = value`` lines; '#' starts a comment."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            values[key] = val
    return values


def _to_bool(s, key):
    if isinstance(s, bool):
        return s
    try:
        return _BOOL[str(s).lower()]
    except KeyError:
        raise ConfigError(f"{key}: expected a boolean, got {s!r}") from None


def _features(val):
    if val in ("auto", None):
        return "auto"
    if isinstance(val, (list, tuple)):
        return tuple(val)
    val = val.strip()
    if not val:
        return ()
    return tuple(f.strip() for f in val.split(","))


def build_run_config(file_values: dict, overrides: dict) -> RunConfig:
    """Merge config-file values and CLI overrides into a RunConfig."""
    v = dict(file_values)
    v.update({k: x for k, x in overrides.items() if x is not None})

    def get(key, default=None):
        return v.get(key, default)

    generator = None
    if get("generator.preset"):
        preset = get("generator.preset")
        if preset != "table2":
            raise ConfigError(f"unknown generator preset: {preset}")
        generator = synthdata.table2_race_profile()
    elif get("generator.config"):
        generator = synthdata.load_generator_config(get("generator.config"))
    try:
        fractions = (
            float(get("split.train", 0.7)),
            float(get("split.calib", 0.15)),
            float(get("split.test", 0.15)),
        )
        return RunConfig(
            data_path=get("data.path"),
            generator=generator,
            split_mode=get("split.mode", "by-episode"),
            split_fractions=fractions,
            risk_features=_features(get("risk.features", "auto")),
            risk_include_time=_to_bool(get("risk.include_time", True), "risk.include_time"),
            risk_include_prev_reward=_to_bool(
                get("risk.include_prev_reward", True), "risk.include_prev_reward"
            ),
            risk_standardize=_to_bool(get("risk.standardize", True), "risk.standardize"),
            risk_l2=float(get("risk.l2", 1.0)),
            policy_features=_features(get("policy.features", "auto")),
            policy_include_time=_to_bool(
                get("policy.include_time", True), "policy.include_time"
            ),
            policy_include_prev_reward=_to_bool(
                get("policy.include_prev_reward", True), "policy.include_prev_reward"
            ),
            policy_standardize=_to_bool(
                get("policy.standardize", True), "policy.standardize"
            ),
            policy_l2=float(get("policy.l2", 1.0)),
            attribute=get("calibrate.attribute"),
            mode=get("calibrate.mode", "coverage"),
            alpha=float(get("calibrate.alpha", 0.10)),
            epsilon=float(get("calibrate.epsilon", 0.02)),
            min_group_n=int(get("calibrate.min_group_n", 200)),
            gamma=float(get("ope.gamma", 0.99)),
            fqe_iterations=int(get("ope.fqe_iterations", 50)),
            fqe_ridge=float(get("ope.fqe_ridge", 1e-6)),
            rho_max=float(get("ope.rho_max", 10.0)),
            self_normalized=_to_bool(
                get("ope.self_normalized", False), "ope.self_normalized"
            ),
            bootstrap_replicates=int(get("ope.bootstrap_replicates", 1000)),
            bootstrap_level=float(get("ope.bootstrap_level", 0.95)),
            reward_norm=_to_bool(get("ope.reward_norm", False), "ope.reward_norm"),
            train_includes_calibration=_to_bool(
                get("policy.train_includes_calibration", False),
                "policy.train_includes_calibration",
            ),
            seed=int(get("run.seed", 0)),
            out_dir=get("run.out_dir", "out"),
            run_label=get("run.label", "run"),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def _common_overrides(args) -> dict:
    ov = {
        "data.path": args.data,
        "generator.config": args.generator,
        "generator.preset": args.preset,
        "calibrate.attribute": args.attribute,
        "calibrate.mode": args.mode,
        "calibrate.min_group_n": args.min_group_n,
        "ope.reward_norm": args.reward_norm,
        "run.seed": args.seed,
        "run.out_dir": args.out_dir,
        "run.label": args.label,
    }
    if getattr(args, "alpha", None) is not None:
        ov["calibrate.alpha"] = args.alpha
    if getattr(args, "epsilon", None) is not None:
        ov["calibrate.epsilon"] = args.epsilon
    return ov


def cmd_run(args) -> int:
    file_values = parse_config_file(args.config) if args.config else {}
    cfg = build_run_config(file_values, _common_overrides(args))
    out_dir, summary = run_pipeline(cfg)
    print(f"run complete: {out_dir}")
    print(
        f"coverage [{summary.coverage_minmax[0]:.3f}, {summary.coverage_minmax[1]:.3f}]"
        f"  harm [{summary.harm_minmax[0]:.3f}, {summary.harm_minmax[1]:.3f}]"
    )
    return 0


def _grid(text, default):
    if text is None:
        return default
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_sweep(args) -> int:
    file_values = parse_config_file(args.config) if args.config else {}
    cfg = build_run_config(file_values, _common_overrides(args))
    alphas = _grid(args.alphas, [cfg.alpha])
    epsilons = _grid(args.epsilons, [cfg.epsilon])
    rows, failures = run_sweep(cfg, alphas, epsilons)
    for row in rows:
        print(
            f"alpha={row['alpha']:g} epsilon={row['epsilon']:g} "
            f"coverage=[{row['coverage_lo']:.3f},{row['coverage_hi']:.3f}] "
            f"harm=[{row['harm_lo']:.3f},{row['harm_hi']:.3f}] "
            f"dr={row['dr_fg_farl']:.4f}"
        )
    for label, msg in failures.items():
        print(f"FAILED {label}: {msg}", file=sys.stderr)
    return 0 if not failures else 2


def cmd_synth(args) -> int:
    if args.preset:
        if args.preset != "table2":
            raise ConfigError(f"unknown generator preset: {args.preset}")
        gen = synthdata.table2_race_profile()
    elif args.generator:
        gen = synthdata.load_generator_config(args.generator)
    else:
        raise ConfigError("synth requires --generator or --preset")
    if args.seed is not None:
        from dataclasses import replace

        gen = replace(gen, seed=args.seed)
    data = synthdata.generate(gen)
    write_dataset(data, args.out)
    sidecar = synthdata.ground_truth_sidecar(
        gen,
        alpha=args.alpha if args.alpha is not None else 0.10,
        epsilon=args.epsilon if args.epsilon is not None else 0.02,
    )
    with open(args.out + ".truth.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {data.n_episodes} episodes ({data.n_steps} steps) to {args.out}")
    return 0


def cmd_report(args) -> int:
    reemit_reports(args.run_dir)
    print(f"re-emitted reports in {args.run_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fgfarl",
        description="Per-group conformal safety calibration and offline "
        "policy evaluation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat dotted-key config file")
        p.add_argument("--data", help="JSONL dataset path")
        p.add_argument("--generator", help="generator config JSON path")
        p.add_argument("--preset", help="named generator preset (table2)")
        p.add_argument("--attribute", help="group attribute to calibrate on")
        p.add_argument("--mode", choices=["coverage", "harm"])
        p.add_argument("--alpha", type=float)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--min-group-n", type=int, dest="min_group_n")
        p.add_argument("--reward-norm", dest="reward_norm", choices=["true", "false"])
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--label")

    p_run = sub.add_parser("run", help="execute the full pipeline")
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run an alpha/epsilon grid")
    add_common(p_sweep)
    p_sweep.add_argument("--alphas", help="comma-separated alpha grid")
    p_sweep.add_argument("--epsilons", help="comma-separated epsilon grid")
    p_sweep.set_defaults(func=cmd_sweep)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--generator", help="generator config JSON path")
    p_synth.add_argument("--preset", help="named generator preset (table2)")
    p_synth.add_argument("--out", required=True, help="output JSONL path")
    p_synth.add_argument("--seed", type=int)
    p_synth.add_argument("--alpha", type=float, help="alpha for the sidecar oracle")
    p_synth.add_argument("--epsilon", type=float, help="epsilon for the sidecar oracle")
    p_synth.set_defaults(func=cmd_synth)

    p_report = sub.add_parser("report", help="re-emit reports from artifacts")
    p_report.add_argument("--run-dir", required=True, dest="run_dir")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

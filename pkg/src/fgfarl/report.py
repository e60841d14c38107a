"""Audit artifacts: run summaries, per-group diagnostic tables as CSV with
JSON mirrors, and sensitivity tables across sweep runs.

Reports only rearrange previously computed artifacts (plus min/max
extraction); all numbers are traceable to serialized thresholds, policies,
and estimates. CSV numbers use fixed 6-decimal formatting so outputs diff
byte-exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .calibrate import ThresholdTable


class ReportError(ValueError):
    pass


def _fmt(x) -> str:
    return f"{float(x):.6f}"


@dataclass(frozen=True)
class RunSummary:
    run_label: str
    mode: str
    attribute: str
    alpha: float
    epsilon: float
    v0_by_policy: dict  # policy name -> float
    dr_by_policy: dict  # policy name -> {"point","ci_lo","ci_hi"}
    coverage_minmax: tuple
    harm_minmax: tuple
    fallback_groups: dict  # category -> {"tau","n","coverage","harm"}
    stage_timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "run_label": self.run_label,
            "mode": self.mode,
            "attribute": self.attribute,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "v0": dict(self.v0_by_policy),
            "dr": {k: dict(v) for k, v in self.dr_by_policy.items()},
            "coverage_minmax": list(self.coverage_minmax),
            "harm_minmax": list(self.harm_minmax),
            "fallback_groups": {k: dict(v) for k, v in self.fallback_groups.items()},
        }


def summarize(
    run_label: str,
    table: ThresholdTable,
    v0_by_policy: dict,
    dr_estimates: dict,
    stage_timings: dict = None,
) -> RunSummary:
    """Assemble the run summary from pipeline artifacts.

    Coverage/harm extrema are taken over non-fallback groups only; fallback
    groups are reported in their own section so the fallback behavior stays
    visible.
    """
    for name in ("fg_farl", "haco", "bc", "fair_bc"):
        if name not in v0_by_policy:
            raise ReportError(f"missing stage artifact: v0 for policy '{name}'")
        if name not in dr_estimates:
            raise ReportError(f"missing stage artifact: dr for policy '{name}'")
    regular = {c: g for c, g in table.per_group.items() if not g.fallback}
    fallback = {
        str(c): {"tau": g.tau, "n": g.n, "coverage": g.coverage_hat, "harm": g.harm_hat}
        for c, g in table.per_group.items()
        if g.fallback
    }
    if regular:
        covs = [g.coverage_hat for g in regular.values()]
        harms = [g.harm_hat for g in regular.values()]
        cov_minmax = (min(covs), max(covs))
        harm_minmax = (min(harms), max(harms))
    else:
        cov_minmax = (0.0, 0.0)
        harm_minmax = (0.0, 0.0)
    dr = {
        name: {"point": est.point, "ci_lo": est.ci_lo, "ci_hi": est.ci_hi}
        for name, est in dr_estimates.items()
    }
    return RunSummary(
        run_label=run_label,
        mode=table.mode,
        attribute=table.attribute,
        alpha=table.alpha,
        epsilon=table.epsilon,
        v0_by_policy=dict(v0_by_policy),
        dr_by_policy=dr,
        coverage_minmax=cov_minmax,
        harm_minmax=harm_minmax,
        fallback_groups=fallback,
        stage_timings=dict(stage_timings or {}),
    )


def _write_csv_json(out_dir, name, header, rows):
    csv_path = os.path.join(out_dir, name + ".csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    json_path = os.path.join(out_dir, name + ".json")
    payload = [dict(zip(header, row)) for row in rows]
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def emit_plot_data(
    out_dir,
    table: ThresholdTable,
    wilson_by_group: dict,
    subgroup_value_rows: list,
) -> None:
    """Write the three per-group diagnostic files (CSV plus JSON mirror).

    ``wilson_by_group``: category -> (lo, hi) for the observed coverage.
    ``subgroup_value_rows``: dicts with keys
      policy, category, n, mean, ci_lo, ci_hi, p_value.
    """
    os.makedirs(out_dir, exist_ok=True)
    target = 1.0 - table.alpha
    cov_rows = []
    harm_rows = []
    cap = table.h_bar + table.epsilon
    for cat in sorted(table.per_group):
        g = table.per_group[cat]
        lo, hi = wilson_by_group.get(cat, (0.0, 1.0))
        cov_rows.append(
            [str(cat), _fmt(g.coverage_hat), _fmt(target), _fmt(lo), _fmt(hi)]
        )
        harm_rows.append([str(cat), _fmt(g.harm_hat), _fmt(cap)])
    _write_csv_json(
        out_dir,
        "coverage_by_group",
        ["category", "coverage", "target", "wilson_lo", "wilson_hi"],
        cov_rows,
    )
    _write_csv_json(out_dir, "harm_by_group", ["category", "harm", "cap"], harm_rows)
    val_rows = [
        [
            str(r["category"]),
            str(int(r["n"])),
            _fmt(r["mean"]),
            _fmt(r["ci_lo"]),
            _fmt(r["ci_hi"]),
            _fmt(r["p_value"]),
            str(r["policy"]),
        ]
        for r in subgroup_value_rows
    ]
    _write_csv_json(
        out_dir,
        "value_by_group",
        ["category", "n", "mean", "ci_lo", "ci_hi", "p_value", "policy"],
        val_rows,
    )


def sensitivity_table(summaries: list) -> list:
    """Rows (alpha, epsilon, coverage min/max, harm min/max, fg_farl DR point)
    across runs that differ only in alpha/epsilon, sorted by (alpha, epsilon).
    """
    if not summaries:
        raise ReportError("no runs supplied")
    base = summaries[0]
    for s in summaries[1:]:
        if (s.mode, s.attribute) != (base.mode, base.attribute):
            raise ReportError(
                "sweep runs must share mode and attribute (only alpha/epsilon vary)"
            )
    rows = []
    for s in sorted(summaries, key=lambda s: (s.alpha, s.epsilon)):
        rows.append(
            {
                "alpha": s.alpha,
                "epsilon": s.epsilon,
                "coverage_lo": s.coverage_minmax[0],
                "coverage_hi": s.coverage_minmax[1],
                "harm_lo": s.harm_minmax[0],
                "harm_hi": s.harm_minmax[1],
                "dr_fg_farl": s.dr_by_policy["fg_farl"]["point"],
                "run_label": s.run_label,
            }
        )
    return rows


def write_sensitivity_table(out_dir, rows: list) -> None:
    os.makedirs(out_dir, exist_ok=True)
    header = [
        "alpha",
        "epsilon",
        "coverage_lo",
        "coverage_hi",
        "harm_lo",
        "harm_hi",
        "dr_fg_farl",
        "run_label",
    ]
    out = [
        [
            _fmt(r["alpha"]),
            _fmt(r["epsilon"]),
            _fmt(r["coverage_lo"]),
            _fmt(r["coverage_hi"]),
            _fmt(r["harm_lo"]),
            _fmt(r["harm_hi"]),
            _fmt(r["dr_fg_farl"]),
            str(r["run_label"]),
        ]
        for r in rows
    ]
    _write_csv_json(out_dir, "sensitivity", header, out)


def write_summary(out_dir, summary: RunSummary) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    # timings are wall-clock and intentionally kept out of summary.json so the
    # rest of the output directory is byte-reproducible
    with open(os.path.join(out_dir, "timings.json"), "w", encoding="utf-8") as fh:
        json.dump(dict(summary.stage_timings), fh, sort_keys=True, indent=2)
        fh.write("\n")

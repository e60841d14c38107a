import csv
import json

import pytest

from fgfarl.calibrate import GroupThreshold, ThresholdTable
from fgfarl.ope import ValueEstimate
from fgfarl.report import (
    ReportError,
    emit_plot_data,
    sensitivity_table,
    summarize,
    write_sensitivity_table,
    write_summary,
)

POLICIES = ("fg_farl", "haco", "bc", "fair_bc")


def make_table(per_group, mode="coverage", alpha=0.1, epsilon=0.02, h_bar=0.05):
    return ThresholdTable(
        attribute="g",
        mode=mode,
        alpha=alpha,
        epsilon=epsilon,
        global_tau=0.4,
        h_bar=h_bar,
        per_group=per_group,
        min_group_n=200,
    )


def make_estimates(points):
    return {
        name: ValueEstimate(
            point=points[name],
            ci_lo=points[name] - 0.1,
            ci_hi=points[name] + 0.1,
            n_episodes=100,
            estimator="dr",
            replicates=1000,
            seed=0,
        )
        for name in POLICIES
    }


def full_summary(label="run", alpha=0.1, epsilon=0.02, per_group=None):
    per_group = per_group or {
        "a": GroupThreshold(0.42, 500, False, 0.898, 0.031),
        "b": GroupThreshold(0.38, 400, False, 0.904, 0.046),
        "c": GroupThreshold(0.40, 120, True, 0.870, 0.050),
    }
    table = make_table(per_group, alpha=alpha, epsilon=epsilon)
    v0 = {n: -1.0 - 0.1 * i for i, n in enumerate(POLICIES)}
    dr = make_estimates({n: -1.2 - 0.1 * i for i, n in enumerate(POLICIES)})
    return summarize(label, table, v0, dr, stage_timings={"risk": 0.5})


class TestSummarize:
    def test_missing_policy_rejected(self):
        table = make_table({"a": GroupThreshold(0.4, 500, False, 0.9, 0.03)})
        v0 = {n: -1.0 for n in POLICIES[:-1]}
        dr = make_estimates({n: -1.0 for n in POLICIES})
        with pytest.raises(ReportError, match="missing stage artifact"):
            summarize("run", table, v0, dr)

    def test_extrema_scan_oracle(self):
        s = full_summary()
        # hand scan over the two non-fallback groups
        assert s.coverage_minmax == (0.898, 0.904)
        assert s.harm_minmax == (0.031, 0.046)

    def test_fallback_group_segregated(self):
        s = full_summary()
        assert set(s.fallback_groups) == {"c"}
        assert s.fallback_groups["c"]["n"] == 120
        # fallback stats never contaminate the extrema
        assert s.coverage_minmax[0] > 0.870

    def test_all_fallback_zero_extrema(self):
        pg = {"a": GroupThreshold(0.4, 10, True, 0.5, 0.2)}
        s = full_summary(per_group=pg)
        assert s.coverage_minmax == (0.0, 0.0)
        assert s.harm_minmax == (0.0, 0.0)

    def test_to_dict_roundtrips_through_json(self):
        s = full_summary()
        d = json.loads(json.dumps(s.to_dict()))
        assert d["alpha"] == 0.1
        assert set(d["v0"]) == set(POLICIES)
        assert d["dr"]["fg_farl"]["point"] == pytest.approx(-1.2)
        assert "stage_timings" not in d  # timings live in their own file


class TestWriteSummary:
    def test_files_and_timings_split(self, tmp_path):
        s = full_summary()
        write_summary(tmp_path, s)
        doc = json.loads((tmp_path / "summary.json").read_text())
        assert "timings" not in json.dumps(doc)
        timings = json.loads((tmp_path / "timings.json").read_text())
        assert timings == {"risk": 0.5}

    def test_byte_determinism(self, tmp_path):
        s = full_summary()
        write_summary(tmp_path / "x", s)
        write_summary(tmp_path / "y", s)
        assert (tmp_path / "x" / "summary.json").read_bytes() == (
            tmp_path / "y" / "summary.json"
        ).read_bytes()


class TestPlotData:
    def emit(self, tmp_path):
        table = make_table(
            {
                "a": GroupThreshold(0.42, 500, False, 0.898, 0.031),
                "b": GroupThreshold(0.38, 400, False, 0.904, 0.046),
            }
        )
        rows = [
            {
                "policy": "fg_farl",
                "category": "a",
                "n": 50,
                "mean": -1.25,
                "ci_lo": -1.4,
                "ci_hi": -1.1,
                "p_value": 1.0,
            }
        ]
        emit_plot_data(tmp_path, table, {"a": (0.87, 0.92), "b": (0.88, 0.93)}, rows)

    def test_csv_json_mirror_agree(self, tmp_path):
        self.emit(tmp_path)
        for name in ("coverage_by_group", "harm_by_group", "value_by_group"):
            with open(tmp_path / f"{name}.csv") as fh:
                csv_rows = list(csv.DictReader(fh))
            json_rows = json.loads((tmp_path / f"{name}.json").read_text())
            assert csv_rows == json_rows

    def test_coverage_rows_parse_back(self, tmp_path):
        self.emit(tmp_path)
        with open(tmp_path / "coverage_by_group.csv") as fh:
            rows = {r["category"]: r for r in csv.DictReader(fh)}
        assert float(rows["a"]["coverage"]) == 0.898
        assert float(rows["a"]["target"]) == 0.9
        assert float(rows["a"]["wilson_lo"]) == 0.87

    def test_harm_cap_column(self, tmp_path):
        self.emit(tmp_path)
        with open(tmp_path / "harm_by_group.csv") as fh:
            rows = list(csv.DictReader(fh))
        # cap = h_bar + epsilon with 6-decimal formatting
        assert all(r["cap"] == "0.070000" for r in rows)

    def test_fixed_decimal_format(self, tmp_path):
        self.emit(tmp_path)
        text = (tmp_path / "value_by_group.csv").read_text()
        assert "-1.250000" in text
        assert "-1.400000" in text


class TestSensitivity:
    def test_rows_sorted_by_alpha_epsilon(self):
        summaries = [
            full_summary("r3", alpha=0.2, epsilon=0.02),
            full_summary("r1", alpha=0.05, epsilon=0.05),
            full_summary("r2", alpha=0.05, epsilon=0.01),
        ]
        rows = sensitivity_table(summaries)
        assert [r["run_label"] for r in rows] == ["r2", "r1", "r3"]
        assert [r["alpha"] for r in rows] == [0.05, 0.05, 0.2]

    def test_mixed_modes_rejected(self):
        a = full_summary("a")
        table = make_table(
            {"x": GroupThreshold(0.4, 500, False, 0.9, 0.03)}, mode="harm"
        )
        b = summarize(
            "b",
            table,
            {n: -1.0 for n in POLICIES},
            make_estimates({n: -1.0 for n in POLICIES}),
        )
        with pytest.raises(ReportError, match="share mode"):
            sensitivity_table([a, b])

    def test_empty_rejected(self):
        with pytest.raises(ReportError, match="no runs"):
            sensitivity_table([])

    def test_written_table_roundtrip(self, tmp_path):
        rows = sensitivity_table(
            [full_summary("r1", alpha=0.05), full_summary("r2", alpha=0.1)]
        )
        write_sensitivity_table(tmp_path, rows)
        with open(tmp_path / "sensitivity.csv") as fh:
            back = list(csv.DictReader(fh))
        assert len(back) == 2
        assert [float(r["alpha"]) for r in back] == [0.05, 0.1]
        assert back[0]["run_label"] == "r1"
        json_rows = json.loads((tmp_path / "sensitivity.json").read_text())
        assert back == json_rows

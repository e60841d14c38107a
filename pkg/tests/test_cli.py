import json
import os

import pytest

from fgfarl.cli import build_run_config, main, parse_config_file
from fgfarl.pipeline import ConfigError, RunConfig
from fgfarl.synthdata import GeneratorConfig, GroupAttributeSpec


def small_generator(seed=0, intercept=-2.0):
    return GeneratorConfig(
        n_episodes=300,
        horizon=2,
        groups=(GroupAttributeSpec("g", ("a", "b"), proportions=(0.5, 0.5)),),
        true_risk_weights=(0.6, 0.4, intercept),
        group_risk_shift={"b": 0.3},
        seed=seed,
        ar_coef=0.5,
    )


@pytest.fixture
def gen_path(tmp_path):
    p = tmp_path / "gen.json"
    p.write_text(json.dumps(small_generator().to_dict()))
    return str(p)


@pytest.fixture
def run_config_file(tmp_path, gen_path):
    p = tmp_path / "run.cfg"
    p.write_text(
        "\n".join(
            [
                "# small smoke configuration",
                f"generator.config = {gen_path}",
                "calibrate.attribute = g",
                "calibrate.min_group_n = 10",
                "ope.bootstrap_replicates = 150",
                "ope.fqe_iterations = 10",
                f"run.out_dir = {tmp_path / 'out'}",
            ]
        )
    )
    return str(p)


class TestConfigParsing:
    def test_values_and_comments(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("a.b = 1  # trailing\n\n# full-line comment\nc.d = hello world\n")
        assert parse_config_file(p) == {"a.b": "1", "c.d": "hello world"}

    def test_malformed_line_number(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("a.b = 1\nnot a pair\n")
        with pytest.raises(ConfigError, match="2"):
            parse_config_file(p)

    def test_overrides_beat_file(self, gen_path):
        cfg = build_run_config(
            {"calibrate.alpha": "0.2", "generator.config": gen_path},
            {"calibrate.alpha": 0.05},
        )
        assert cfg.alpha == 0.05

    def test_none_overrides_ignored(self, gen_path):
        cfg = build_run_config(
            {"calibrate.alpha": "0.2", "generator.config": gen_path},
            {"calibrate.alpha": None},
        )
        assert cfg.alpha == 0.2

    def test_bad_boolean(self, gen_path):
        with pytest.raises(ConfigError, match="boolean"):
            build_run_config(
                {"generator.config": gen_path, "ope.reward_norm": "maybe"}, {}
            )

    def test_bad_number(self, gen_path):
        with pytest.raises(ConfigError):
            build_run_config(
                {"generator.config": gen_path, "calibrate.alpha": "lots"}, {}
            )

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="preset"):
            build_run_config({"generator.preset": "table9"}, {})

    def test_feature_list_parsing(self, gen_path):
        cfg = build_run_config(
            {"generator.config": gen_path, "risk.features": "x1, x2"}, {}
        )
        assert cfg.risk_features == ("x1", "x2")

    def test_run_config_validation(self):
        with pytest.raises(ConfigError, match="alpha"):
            RunConfig(generator=small_generator(), alpha=1.5)
        with pytest.raises(ConfigError, match="mode"):
            RunConfig(generator=small_generator(), mode="strict")
        with pytest.raises(ConfigError, match="data path or a generator"):
            RunConfig()


class TestSynthCommand:
    def test_writes_dataset_and_sidecar(self, tmp_path, gen_path):
        out = str(tmp_path / "d.jsonl")
        assert main(["synth", "--generator", gen_path, "--out", out]) == 0
        assert os.path.exists(out)
        sidecar = json.loads(open(out + ".truth.json").read())
        assert "analytic_thresholds" in sidecar

    def test_byte_deterministic(self, tmp_path, gen_path):
        a = str(tmp_path / "a.jsonl")
        b = str(tmp_path / "b.jsonl")
        main(["synth", "--generator", gen_path, "--out", a])
        main(["synth", "--generator", gen_path, "--out", b])
        assert open(a, "rb").read() == open(b, "rb").read()
        assert open(a + ".truth.json", "rb").read() == open(b + ".truth.json", "rb").read()

    def test_seed_override_changes_data(self, tmp_path, gen_path):
        a = str(tmp_path / "a.jsonl")
        b = str(tmp_path / "b.jsonl")
        main(["synth", "--generator", gen_path, "--out", a])
        main(["synth", "--generator", gen_path, "--out", b, "--seed", "9"])
        assert open(a, "rb").read() != open(b, "rb").read()

    def test_requires_source(self, tmp_path, capsys):
        code = main(["synth", "--out", str(tmp_path / "d.jsonl")])
        assert code == 1
        assert "config error" in capsys.readouterr().err


class TestRunCommand:
    def test_smoke_run_artifacts(self, tmp_path, run_config_file, capsys):
        code = main(["run", "--config", run_config_file, "--label", "smoke"])
        assert code == 0
        out = tmp_path / "out" / "smoke"
        expected = [
            "config.json",
            "risk_model.json",
            "thresholds.json",
            "thresholds_global.json",
            "policy_fg_farl.json",
            "policy_haco.json",
            "policy_bc.json",
            "policy_fair_bc.json",
            "estimates.json",
            "summary.json",
            "timings.json",
            "coverage_by_group.csv",
            "harm_by_group.csv",
            "value_by_group.csv",
        ]
        for name in expected:
            assert (out / name).exists(), name
        assert "run complete" in capsys.readouterr().out
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["v0"]) == {"fg_farl", "haco", "bc", "fair_bc"}

    def test_missing_config_file_exit_1(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "absent.cfg")])
        assert code == 1

    def test_stage_failure_exit_2(self, tmp_path, capsys):
        # harmless generator: the risk stage sees a single class and fails
        gen = tmp_path / "gen.json"
        gen.write_text(json.dumps(small_generator(intercept=-50.0).to_dict()))
        code = main(
            [
                "run",
                "--generator",
                str(gen),
                "--attribute",
                "g",
                "--out-dir",
                str(tmp_path / "out"),
            ]
        )
        assert code == 2
        assert "stage 'risk' failed" in capsys.readouterr().err


class TestSweepCommand:
    def test_grid_and_sensitivity(self, tmp_path, run_config_file, capsys):
        code = main(
            [
                "sweep",
                "--config",
                run_config_file,
                "--label",
                "sw",
                "--alphas",
                "0.1,0.2",
            ]
        )
        assert code == 0
        sens = tmp_path / "out" / "sw" / "sensitivity.csv"
        lines = sens.read_text().strip().splitlines()
        assert len(lines) == 3  # header + one row per alpha
        printed = capsys.readouterr().out
        assert "alpha=0.1" in printed and "alpha=0.2" in printed


class TestReportCommand:
    def test_reemit_reproduces_summary(self, tmp_path, run_config_file):
        main(["run", "--config", run_config_file, "--label", "rpt"])
        out = tmp_path / "out" / "rpt"
        before = (out / "summary.json").read_bytes()
        timings_before = (out / "timings.json").read_bytes()
        (out / "summary.json").unlink()
        (out / "coverage_by_group.csv").unlink()
        code = main(["report", "--run-dir", str(out)])
        assert code == 0
        assert (out / "summary.json").read_bytes() == before
        assert (out / "coverage_by_group.csv").exists()
        # the original wall-clock record survives re-emission
        assert (out / "timings.json").read_bytes() == timings_before

"""
Tests for the gatlab command line.
"""

import json
from pathlib import Path

import pytest

from gatlab import cli
from gatlab.config import dump_config
from gatlab.models import IncompatibleArchivesError, InvariantViolation


@pytest.fixture
def tiny_config_file(tmp_path, tiny_config):
    def write(method="direct", name="config.json", **kwargs):
        path = tmp_path / name
        dump_config(tiny_config(method, **kwargs), str(path))
        return str(path)
    return write


class TestSimulate:
    """Test the simulate command."""

    def test_prints_metrics_and_trace(self, tmp_path, capsys):
        trace = tmp_path / "trace.csv"
        code = cli.main(["simulate", "--rows", "1", "--cols", "1", "--horizon", "20", "--trace", str(trace)])
        assert code == cli.EXIT_OK
        out = capsys.readouterr().out
        for name in ("att", "queue", "delay", "throughput", "reward"):
            assert name in out
        lines = trace.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "t,intersection,phase,queue,pressure"
        assert len(lines) == 1 + 20

    def test_unknown_dynamics_is_a_config_error(self):
        assert cli.main(["simulate", "--dynamics", "fog"]) == cli.EXIT_CONFIG

    def test_partial_inline_dynamics(self):
        assert cli.main(["simulate", "--accel", "1.0"]) == cli.EXIT_CONFIG

    def test_invalid_inline_dynamics(self):
        code = cli.main(["simulate", "--accel", "1.0", "--decel", "5.0", "--emergency-decel", "2.0"])
        assert code == cli.EXIT_CONFIG

    def test_negative_horizon(self):
        assert cli.main(["simulate", "--horizon", "-5"]) == cli.EXIT_CONFIG

    def test_inline_dynamics_run(self, capsys):
        code = cli.main([
            "simulate", "--cols", "1", "--horizon", "10",
            "--accel", "1.0", "--decel", "2.0", "--emergency-decel", "3.0", "--startup-delay", "0.5",
        ])
        assert code == cli.EXIT_OK
        assert "Fixed-cycle baseline" in capsys.readouterr().out


class TestUsage:
    """Test argument parsing and exit codes."""

    def test_unknown_flag(self):
        assert cli.main(["train", "--warp"]) == cli.EXIT_CONFIG

    def test_missing_command(self):
        assert cli.main([]) == cli.EXIT_CONFIG

    def test_bad_log_level(self):
        assert cli.main(["--log-level", "chatty", "simulate", "--horizon", "1"]) == cli.EXIT_CONFIG

    def test_log_level_from_environment(self, monkeypatch, mocker):
        monkeypatch.setenv("GATLAB_LOG_LEVEL", "WARNING")
        basic_config = mocker.patch("gatlab.cli.logging.basicConfig")
        assert cli.main(["simulate", "--cols", "1", "--horizon", "1"]) == cli.EXIT_OK
        assert basic_config.call_args.kwargs["level"] == "WARNING"

    def test_invariant_violation_exit_code(self, mocker):
        mocker.patch("gatlab.harness.run_trials", side_effect=InvariantViolation("pattern safety"))
        assert cli.main(["train", "--method", "jl-pattern"]) == cli.EXIT_INVARIANT

    def test_unexpected_failure_exit_code(self, mocker):
        mocker.patch("gatlab.harness.run_trials", side_effect=RuntimeError("boom"))
        assert cli.main(["train"]) == cli.EXIT_FAILURE

    def test_archive_error_exit_code(self, mocker):
        mocker.patch("gatlab.cli.read_archive", side_effect=IncompatibleArchivesError("nope"))
        assert cli.main(["report", "somewhere"]) == cli.EXIT_ARCHIVE


class TestTrain:
    """Test the train command."""

    def test_overrides_reach_the_harness(self, mocker, tmp_path, tiny_config_file):
        run = mocker.patch("gatlab.harness.run_trials")
        run.return_value.method_dir = tmp_path / "out" / "jl-prob"
        mocker.patch("gatlab.cli.render_report", return_value="table\n")
        mocker.patch("gatlab.cli.report_table", return_value=[])
        code = cli.main([
            "train", "--config", tiny_config_file(), "--method", "jl-prob", "--ground-prob", "0.25",
            "--trials", "2", "--seed", "5", "--out", str(tmp_path / "out"),
        ])
        assert code == cli.EXIT_OK
        config = run.call_args.args[0]
        assert config.method == "jl-prob"
        assert config.p_ground == 0.25
        assert config.trials == 2
        assert config.base_seed == 5
        assert run.call_args.kwargs["out_dir"] == str(tmp_path / "out")

    def test_invalid_override_runs_nothing(self, mocker, tiny_config_file):
        run = mocker.patch("gatlab.harness.run_trials")
        assert cli.main(["train", "--config", tiny_config_file(), "--ground-prob", "1.5"]) == cli.EXIT_CONFIG
        run.assert_not_called()

    def test_pattern_without_radius(self, tiny_config_file):
        code = cli.main(["train", "--config", tiny_config_file(), "--method", "jl-pattern", "--radius", "0"])
        assert code == cli.EXIT_CONFIG

    def test_output_dir_from_environment(self, mocker, monkeypatch, tmp_path, tiny_config_file):
        monkeypatch.setenv("GATLAB_OUTPUT_DIR", str(tmp_path / "env-out"))
        run = mocker.patch("gatlab.harness.run_trials")
        mocker.patch("gatlab.cli.render_report", return_value="")
        mocker.patch("gatlab.cli.report_table", return_value=[])
        assert cli.main(["train", "--config", tiny_config_file()]) == cli.EXIT_OK
        assert run.call_args.kwargs["out_dir"] == str(tmp_path / "env-out")

    def test_mistyped_config_file(self, mocker, tmp_path, tiny_config_file):
        path = tmp_path / "mistyped.json"
        data = json.loads(Path(tiny_config_file()).read_text(encoding="utf-8"))
        data["grid"]["rows"] = "one"
        path.write_text(json.dumps(data), encoding="utf-8")
        run = mocker.patch("gatlab.harness.run_trials")
        assert cli.main(["train", "--config", str(path)]) == cli.EXIT_CONFIG
        run.assert_not_called()

    def test_jobs_must_be_positive(self, tiny_config_file):
        assert cli.main(["train", "--config", tiny_config_file(), "--jobs", "0"]) == cli.EXIT_CONFIG


@pytest.mark.integration
class TestArchiveCommands:
    """Test train, evaluate and report on real archives."""

    def test_train_evaluate_report(self, tmp_path, capsys, tiny_config_file):
        out = tmp_path / "out"
        config_path = tiny_config_file()
        assert cli.main(["train", "--config", config_path, "--out", str(out)]) == cli.EXIT_OK
        assert cli.main(["train", "--config", config_path, "--method", "jl-pattern", "--out", str(out)]) == cli.EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert set(manifest["archives"]) == {"direct", "jl-pattern"}
        capsys.readouterr()

        assert cli.main(["evaluate", "--archive", str(out / "jl-pattern")]) == cli.EXIT_OK
        assert "Gap (real - sim)" in capsys.readouterr().out

        report_dir = tmp_path / "report"
        code = cli.main(["report", str(out / "direct"), str(out / "jl-pattern"), "--out", str(report_dir)])
        assert code == cli.EXIT_OK
        text = (report_dir / "report.txt").read_text(encoding="utf-8")
        assert "direct" in text and "jl-pattern" in text
        csv_lines = (report_dir / "report.csv").read_text(encoding="utf-8").splitlines()
        assert csv_lines[0] == "method,metric,mean_real,std_real,mean_gap,std_gap,best_epoch_mean"
        assert len(csv_lines) == 1 + 2 * 5

    def test_evaluate_missing_trial(self, tmp_path, tiny_config_file):
        out = tmp_path / "out"
        assert cli.main(["train", "--config", tiny_config_file(), "--out", str(out)]) == cli.EXIT_OK
        assert cli.main(["evaluate", "--archive", str(out / "direct"), "--trial", "3"]) == cli.EXIT_CONFIG

    def test_evaluate_missing_checkpoint(self, tmp_path, tiny_config_file):
        out = tmp_path / "out"
        assert cli.main(["train", "--config", tiny_config_file(), "--out", str(out)]) == cli.EXIT_OK
        (out / "direct" / "trial-0" / "checkpoints" / "best" / "agent-1.txt").unlink()
        assert cli.main(["evaluate", "--archive", str(out / "direct")]) == cli.EXIT_ARCHIVE

    def test_report_refuses_mismatched_grids(self, tmp_path, tiny_config_file):
        small = tiny_config_file(name="small.json")
        wide = tiny_config_file(name="wide.json", rows=2, cols=2)
        assert cli.main(["train", "--config", small, "--out", str(tmp_path / "a")]) == cli.EXIT_OK
        assert cli.main(["train", "--config", wide, "--out", str(tmp_path / "b")]) == cli.EXIT_OK
        code = cli.main(["report", str(tmp_path / "a" / "direct"), str(tmp_path / "b" / "direct")])
        assert code == cli.EXIT_ARCHIVE

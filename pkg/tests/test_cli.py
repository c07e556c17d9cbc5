import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from minkground.cli import main


def run(capsys, *args) -> tuple[int, str]:
    code = main(list(args))
    out = capsys.readouterr().out
    return code, out


class TestThresholdsCommand:
    def test_power_values(self, tmp_path, capsys):
        code, out = run(
            capsys,
            "thresholds", "--family", "power", "--lambda", "1", "--q", "3", "--N", "3",
            "--out-dir", str(tmp_path),
        )
        assert code == 0
        summary = json.loads(out)
        th = summary["thresholds"]
        assert th["alpha"] == pytest.approx(1.0, abs=1e-10)
        assert th["xi0"] == pytest.approx(math.sqrt(2.0), abs=1e-10)
        assert th["beta"] is None  # +inf serialized as null
        assert summary["assumption_report"]["required_pass"]
        assert (tmp_path / "thresholds_summary.json").exists()

    def test_assumption_failure_exits_2(self, tmp_path, capsys):
        code, _ = run(
            capsys,
            "thresholds", "--family", "sine", "--q", "2", "--N", "3",
            "--out-dir", str(tmp_path),
        )
        assert code == 2

    def test_missing_family_parameter_exits_1(self, tmp_path, capsys):
        code, _ = run(capsys, "thresholds", "--family", "power", "--lambda", "1",
                      "--out-dir", str(tmp_path))
        assert code == 1

    def test_unknown_flag_exits_1(self, tmp_path, capsys):
        code, _ = run(capsys, "thresholds", "--familly", "power")
        assert code == 1


class TestShootCommand:
    def test_turning_summary_and_row_count(self, tmp_path, capsys):
        code, out = run(
            capsys,
            "shoot", "--family", "power", "--lambda", "1", "--q", "3", "--N", "3",
            "--xi", "1.2", "--out-dir", str(tmp_path),
        )
        assert code == 0
        summary = json.loads(out)
        assert summary["outcome"]["outcome"]["kind"] == "turning"
        r_event = summary["outcome"]["outcome"]["r_turn"]
        stride = summary["config"]["stride"]
        with (tmp_path / "shoot_profile.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["r", "u", "uprime", "q", "D", "energy_residual"]
        assert len(rows) - 1 == math.ceil(r_event / stride) + 1

    def test_profile_slopes_below_one(self, tmp_path, capsys):
        code, _ = run(
            capsys,
            "shoot", "--family", "power", "--lambda", "1", "--q", "3", "--N", "3",
            "--xi", "2.5", "--out-dir", str(tmp_path),
        )
        assert code == 0
        data = np.loadtxt(tmp_path / "shoot_profile.csv", delimiter=",", skiprows=1)
        assert np.all(np.abs(data[:, 2]) < 1.0)

    def test_height_outside_interval_exits_1(self, tmp_path, capsys):
        code, _ = run(
            capsys,
            "shoot", "--family", "power", "--lambda", "1", "--q", "3", "--N", "3",
            "--xi", "0.5", "--out-dir", str(tmp_path),
        )
        assert code == 1


class TestSolveCommand:
    def test_power_pipeline(self, tmp_path, capsys):
        code, out = run(
            capsys,
            "solve", "--family", "power", "--lambda", "1", "--q", "3", "--N", "3",
            "--out-dir", str(tmp_path),
        )
        assert code == 0
        summary = json.loads(out)
        assert summary["verification"]["all_passed"]
        assert summary["solution"]["bracket_width"] <= 1e-10
        data = np.loadtxt(tmp_path / "solve_profile.csv", delimiter=",", skiprows=1)
        assert np.all(np.diff(data[:, 1]) < 0.0)
        assert np.all(data[:, 1] > 0.0)

    def test_bracket_failure_exit_code(self, tmp_path, capsys):
        # scan ceiling right above alpha leaves no room to find a crossing
        code, out = run(
            capsys,
            "solve", "--family", "power", "--lambda", "1", "--q", "3", "--N", "3",
            "--scan-max", "1.41", "--out-dir", str(tmp_path),
        )
        assert code == 2 or code == 3  # threshold search or bracket must fail


class TestScanCommand:
    def test_row_count_and_gaps(self, tmp_path, capsys):
        code, out = run(
            capsys,
            "scan", "--family", "power", "--lambda", "1", "--q", "3", "--N", "3",
            "--xi-min", "1.01", "--xi-max", "3.0", "--points", "101",
            "--out-dir", str(tmp_path),
        )
        assert code == 0
        with (tmp_path / "scan_table.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert len(rows) - 1 == 101
        summary = json.loads(out)
        assert summary["scan"]["double_classified"] == 0
        assert len(summary["scan"]["gaps"]) >= 1  # the turning/crossing boundary

    def test_deterministic_across_runs_and_workers(self, tmp_path, capsys):
        args = [
            "scan", "--family", "power", "--lambda", "1", "--q", "3", "--N", "3",
            "--xi-min", "1.05", "--xi-max", "2.95", "--points", "40",
            "--out-dir", str(tmp_path),
        ]
        assert main(args + ["--workers", "1"]) == 0
        capsys.readouterr()
        table1 = (tmp_path / "scan_table.csv").read_bytes()
        summary1 = (tmp_path / "scan_summary.json").read_bytes()
        assert main(args + ["--workers", "1"]) == 0
        capsys.readouterr()
        assert (tmp_path / "scan_table.csv").read_bytes() == table1
        assert (tmp_path / "scan_summary.json").read_bytes() == summary1
        assert main(args + ["--workers", "2"]) == 0
        capsys.readouterr()
        assert (tmp_path / "scan_table.csv").read_bytes() == table1
        s1 = json.loads(summary1)
        s2 = json.loads((tmp_path / "scan_summary.json").read_text())
        s2["config"]["workers"] = s1["config"]["workers"]
        assert s1 == s2


class TestConfigFile:
    def test_file_plus_flag_override(self, tmp_path, capsys):
        cfg = {
            "family": "power",
            "lambda": 4.0,
            "q": 3.0,
            "N": 3,
            "run": {"out_dir": str(tmp_path)},
        }
        path = tmp_path / "run.json"
        path.write_text(json.dumps(cfg))
        code, out = run(capsys, "thresholds", "--config", str(path))
        assert code == 0
        assert json.loads(out)["thresholds"]["alpha"] == pytest.approx(2.0, abs=1e-9)
        # flags win over the file
        code, out = run(capsys, "thresholds", "--config", str(path), "--lambda", "1")
        assert code == 0
        assert json.loads(out)["thresholds"]["alpha"] == pytest.approx(1.0, abs=1e-9)

    def test_unknown_key_rejected(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"family": "power", "lambda": 1, "q": 3, "nope": 1}))
        code, _ = run(capsys, "thresholds", "--config", str(path))
        assert code == 1

    def test_config_embedded_in_summary(self, tmp_path, capsys):
        code, out = run(
            capsys,
            "thresholds", "--family", "power", "--lambda", "2", "--q", "2", "--N", "4",
            "--out-dir", str(tmp_path),
        )
        assert code == 0
        summary = json.loads(out)
        assert summary["config"]["lam"] == 2.0
        assert summary["config"]["N"] == 4
        assert summary["version"]
        assert set(summary["timings"]) == {"shots", "steps", "f_evals"}

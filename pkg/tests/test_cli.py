"""End-to-end CLI runs: artifacts, exit codes, reproducibility."""
from __future__ import annotations

import json

import pytest

import vaoi
from vaoi.cli import main

from conftest import TINY


def write_config(path, **overrides):
    doc = {
        "params": TINY.to_json(),
        "solver": {"epsilon": 1e-8, "max_iter": 100000},
        "protocol": {"horizon": 300, "replications": 5, "seed": 7},
        "out_dir": str(path.parent / "out"),
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc), encoding="utf-8")
    return doc


def read_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


class TestSolveCommand:
    def test_writes_all_artifacts(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        write_config(cfg)
        assert main(["solve", "--config", str(cfg)]) == 0
        out = tmp_path / "out"
        for name in ("policy.csv", "value.csv", "solve_report.json", "thresholds.csv"):
            assert (out / name).exists(), name
        report = json.loads((out / "solve_report.json").read_text())
        assert report["converged"] is True
        assert report["state_count"] == 18
        assert "config_fingerprint" in report
        policy = vaoi.solver.load_policy_csv(out / "policy.csv")
        assert policy.fingerprint == TINY.fingerprint()

    def test_rerun_byte_reproduces(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        write_config(cfg)
        assert main(["solve", "--config", str(cfg)]) == 0
        first = read_bytes(tmp_path / "out")
        assert main(["solve", "--config", str(cfg)]) == 0
        assert read_bytes(tmp_path / "out") == first

    def test_missing_config(self, tmp_path, capsys):
        assert main(["solve", "--config", str(tmp_path / "absent.json")]) == 2
        assert "absent.json" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text("{not json", encoding="utf-8")
        assert main(["solve", "--config", str(cfg)]) == 2
        assert "config" in capsys.readouterr().err

    def test_oversized_instance_names_state_count(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        params = {"K": 3, "B": 5, "delta_max": 99, "beta": 0.2, "p_t": 0.5,
                  "q": [0.1, 0.2, 0.3], "lambda": [0.2, 0.2, 0.2]}
        write_config(cfg, params=params)
        assert main(["solve", "--config", str(cfg)]) == 2
        assert "600000000" in capsys.readouterr().err

    def test_flag_overrides(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        write_config(cfg)
        alt = tmp_path / "alt"
        assert main(["solve", "--config", str(cfg), "--out", str(alt)]) == 0
        assert (alt / "policy.csv").exists()


class TestCheckCommand:
    def test_check_after_solve_passes(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        write_config(cfg)
        assert main(["solve", "--config", str(cfg)]) == 0
        assert main(["check", "--config", str(cfg)]) == 0
        report = json.loads((tmp_path / "out" / "structure_report.json").read_text())
        assert report["passed"] is True
        assert report["accessibility"]["closed_class_count"] == 1

    def test_fingerprint_mismatch_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        write_config(cfg)
        assert main(["solve", "--config", str(cfg)]) == 0
        other = tmp_path / "other.json"
        write_config(other, params={**TINY.to_json(), "beta": 0.4})
        assert main(["check", "--config", str(other)]) == 2
        assert "fingerprint" in capsys.readouterr().err


class TestSamplepathCommand:
    def test_shared_exogenous_stream(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        write_config(cfg, protocol={"horizon": 200, "replications": 1, "seed": 3})
        assert main(["samplepath", "--config", str(cfg)]) == 0
        out = tmp_path / "out"
        traces = {}
        for name in ("optimal", "greedy"):
            lines = (out / f"samplepath_{name}.csv").read_text().splitlines()
            header = lines[1].split(",")
            rows = [line.split(",") for line in lines[2:]]
            traces[name] = {col: [row[i] for row in rows] for i, col in enumerate(header)}
        for col in ("request", "e", "z", "g1"):
            assert traces["optimal"][col] == traces["greedy"][col], col
        assert len(traces["optimal"]["t"]) == 200


class TestOracleCommand:
    def test_reports_gain(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        write_config(cfg)
        assert main(["oracle", "--config", str(cfg)]) == 0
        report = json.loads((tmp_path / "out" / "oracle_report.json").read_text())
        assert report["gain"] == pytest.approx(1.0505050505050506, abs=1e-9)
        assert (tmp_path / "out" / "oracle_policy.csv").exists()

    def test_guard_respected(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        write_config(cfg, params={**TINY.to_json(), "B": 2}, oracle_max_policies=100)
        assert main(["oracle", "--config", str(cfg)]) == 2
        assert "262144" in capsys.readouterr().err


class TestSweepCommand:
    def test_writes_figure_csv_and_manifest(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        write_config(
            cfg,
            sweeps=[{"axis": "beta", "values": [0.3, 0.6]}],
            policies=["optimal", "greedy", "never"],
        )
        assert main(["sweep", "--config", str(cfg)]) == 0
        out = tmp_path / "out"
        lines = (out / "fig6.csv").read_text().splitlines()
        assert lines[1] == "axis_value,policy,mean,std_error,replications,horizon"
        assert len(lines) == 8  # fingerprint + header + 2 values x 3 policies
        manifest = json.loads((out / "sweep_manifest.json").read_text())
        assert manifest["sweeps"][0]["axis"] == "beta"
        assert manifest["sweeps"][0]["file"] == "fig6.csv"
        assert manifest["protocol"]["seed"] == 7
        assert all(pt["solve_report"]["converged"] for pt in manifest["sweeps"][0]["points"])

    def test_rerun_byte_reproduces(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        write_config(cfg, sweeps=[{"axis": "p_t", "values": [0.4]}], policies=["greedy"])
        assert main(["sweep", "--config", str(cfg)]) == 0
        first = read_bytes(tmp_path / "out")
        assert main(["sweep", "--config", str(cfg)]) == 0
        assert read_bytes(tmp_path / "out") == first

    def test_config_without_sweeps_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        write_config(cfg)
        assert main(["sweep", "--config", str(cfg)]) == 2
        assert "sweep" in capsys.readouterr().err

    def test_unknown_axis_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        write_config(cfg, sweeps=[{"axis": "q_first", "values": [0.1]}])
        assert main(["sweep", "--config", str(cfg)]) == 2

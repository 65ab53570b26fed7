import json

import pytest

from wafersim.cli import (
    EXIT_CAPACITY,
    EXIT_OK,
    EXIT_VALIDATION,
    main,
)


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def small_model_config(tmp_path, **extra):
    return write_config(tmp_path, {
        "model": {"params": {"n_total": 200}},
        **extra,
    })


class TestBuild:
    def test_build_brunel(self, tmp_path):
        cfg = small_model_config(tmp_path)
        code = main(["build", "brunel", "--out-dir", str(tmp_path),
                     "--config", cfg])
        assert code == EXIT_OK
        assert (tmp_path / "spec.json").exists()

    def test_build_microcircuit(self, tmp_path):
        cfg = write_config(tmp_path, {"model": {"params": {"scale": 0.02}}})
        code = main(["build", "microcircuit", "--out-dir", str(tmp_path),
                     "--config", cfg])
        assert code == EXIT_OK

    def test_invalid_params_exit_2(self, tmp_path):
        cfg = write_config(tmp_path, {"model": {"params": {"n_total": -5}}})
        code = main(["build", "brunel", "--out-dir", str(tmp_path),
                     "--config", cfg])
        assert code == EXIT_VALIDATION

    def test_missing_model_exit_2(self, tmp_path):
        assert main(["build", "--out-dir", str(tmp_path)]) == EXIT_VALIDATION


class TestStageCommands:
    @pytest.fixture()
    def built(self, tmp_path):
        cfg = small_model_config(tmp_path)
        assert main(["build", "brunel", "--out-dir", str(tmp_path),
                     "--config", cfg]) == EXIT_OK
        return tmp_path

    def test_adapt_map_simulate_analyze(self, built):
        spec = str(built / "spec.json")
        assert main(["adapt", spec, "--out-dir", str(built)]) == EXIT_OK
        adapted = str(built / "adapted.json")
        assert main(["map", adapted, "--out-dir", str(built)]) == EXIT_OK
        mapped = str(built / "mapped.json")
        assert main(["simulate", mapped, "--out-dir", str(built),
                     "--duration", "300"]) == EXIT_OK
        spikes = str(built / "spikes.bin")
        assert main(["analyze", spikes, "--out-dir", str(built),
                     "--window-start", "100"]) == EXIT_OK
        summary = json.loads((built / "analysis.json").read_text())
        assert "regime" in summary

    def test_map_capacity_failure_exit_3(self, built, tmp_path):
        spec = str(built / "spec.json")
        assert main(["adapt", spec, "--out-dir", str(built)]) == EXIT_OK
        topo = write_config(tmp_path, {"topology": {
            "rows": 1, "cols": 1, "circuits_per_asic": 4}}, name="topo.json")
        code = main(["map", str(built / "adapted.json"),
                     "--out-dir", str(built), "--config", topo])
        assert code == EXIT_CAPACITY

    def test_missing_file_exit_2(self, tmp_path):
        code = main(["simulate", str(tmp_path / "missing.json"),
                     "--out-dir", str(tmp_path)])
        assert code == EXIT_VALIDATION


class TestSweepBenchWafer:
    def test_sweep_writes_grid(self, tmp_path):
        cfg = write_config(tmp_path, {
            "model": {"params": {"n_total": 200}},
            "simulation": {"duration": 400.0},
        })
        code = main(["sweep", "--g", "4,6", "--eta", "2", "--out-dir",
                     str(tmp_path), "--config", cfg])
        assert code == EXIT_OK
        lines = (tmp_path / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 3

    def test_bench_runs_default(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "model": {"name": "brunel", "params": {"n_total": 300}},
            "simulation": {"duration": 300.0},
        })
        code = main(["bench", "--out-dir", str(tmp_path), "--config", cfg])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "BrainScaleS-1" in out
        assert "events per second" in out

    def test_wafer_report(self, tmp_path, capsys):
        code = main(["wafer", "report", "--out-dir", str(tmp_path)])
        assert code == EXIT_OK
        doc = json.loads((tmp_path / "wafer_report.json").read_text())
        assert doc["total_circuits"] == 196_608
        assert doc["max_fan_in"] == 14_336

import csv
import json

import pytest

from xaas.cli import main


def run(argv, tmp_path, name):
    out = tmp_path / name
    assert main(argv + ["--out", str(out)]) == 0
    return out.read_bytes()


class TestSimulate:
    ARGS = ["simulate", "--devices", "20", "--hours", "0.3", "--seeds", "0,1"]

    def test_rerun_byte_identical(self, tmp_path):
        a = run(self.ARGS, tmp_path, "a.json")
        b = run(self.ARGS, tmp_path, "b.json")
        assert a == b
        doc = json.loads(a)
        assert [r["seed"] for r in doc["reports"]] == [0, 1]
        assert doc["aggregate"]["mean_latency_ms"]["n"] == 2

    def test_event_log_written(self, tmp_path):
        log = tmp_path / "events.ndjson"
        run(self.ARGS[:-2] + ["--seeds", "0", "--event-log", str(log)], tmp_path, "s.json")
        rows = [json.loads(line) for line in log.read_text().splitlines()]
        assert rows and {"event"} <= set(rows[0])

    def test_ablation_flag(self, tmp_path):
        doc = json.loads(run(self.ARGS[:-2] + ["--ablate", "no_cache"], tmp_path, "n.json"))
        assert doc["ablations"] == ["no_cache"]
        assert doc["reports"][0]["hit_rate"] == 0.0

    def test_bad_config_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"system": {"nope": 1}}))
        assert main(["simulate", "--config", str(bad)]) == 2
        assert "nope" in capsys.readouterr().err

    def test_bad_mode_is_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["simulate", "--mode", "fogxai"])
        assert info.value.code == 2


class TestSweep:
    ARGS = ["sweep", "--experiment", "heterogeneity", "--grid", "0.2,0.8",
            "--seeds", "0", "--modes", "xaas,edgexai"]

    def test_rerun_byte_identical_csv(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"sweeps": {"heterogeneity": {
            "workload": {"num_devices": 20, "duration_hours": 0.2, "warmup_hours": 0.05}}}}))
        argv = self.ARGS + ["--config", str(cfg)]
        a = run(argv, tmp_path, "a.csv")
        b = run(argv, tmp_path, "b.csv")
        assert a == b
        rows = list(csv.DictReader(a.decode().splitlines()))
        assert [(r["grid_value"], r["mode"]) for r in rows] == [
            ("0.2", "xaas"), ("0.2", "edgexai"), ("0.8", "xaas"), ("0.8", "edgexai")]
        assert all("np." not in v for r in rows for v in r.values())

    def test_unknown_experiment_rejected(self):
        with pytest.raises(SystemExit):
            main(["sweep", "--experiment", "nope"])


def test_verify_bench_reports_cost_ratio(tmp_path):
    doc = json.loads(run(["verify-bench", "--seeds", "0", "--models", "2", "--points", "5"],
                         tmp_path, "v.json"))
    assert doc["cost_ratio"] == 0.03 and doc["drift"] == 0.55

import json
import os
import signal
import subprocess
import sys
import time

import pytest
import requests

from camnet.cli import dispatch
from camnet.model import CameraRecord, StreamEndpoint
from camnet.registry import RegistryStore


def run_cli(argv, capsys):
    code = dispatch(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def plan_files(tmp_path):
    catalog = {
        "instance_types": [
            {"name": "small", "region": "us-east", "cpu_capacity": 10, "memory_capacity": 64, "gpu_capacity": 0, "cost_rate": 0.4},
            {"name": "big", "region": "us-east", "cpu_capacity": 100, "memory_capacity": 1024, "gpu_capacity": 0, "cost_rate": 0.5},
        ]
    }
    workload = {
        "streams": [
            {"stream_id": f"s{i}", "cpu_per_frame": 0.1, "memory": 8, "gpu_per_frame": 0, "required_fps": 1, "camera_region": "us-east"}
            for i in range(10)
        ]
    }
    c = tmp_path / "catalog.json"
    w = tmp_path / "workload.json"
    c.write_text(json.dumps(catalog))
    w.write_text(json.dumps(workload))
    return str(w), str(c)


class TestPlanCommand:
    def test_plan_json_and_savings(self, plan_files, capsys):
        w, c = plan_files
        code, out, err = run_cli(["plan", "--workload", w, "--catalog", c, "--duration", "1", "--oracle"], capsys)
        assert code == 0
        doc = json.loads(out)
        assert set(doc["plans"]) == {"naive", "packed", "oracle"}
        assert doc["plans"]["packed"]["total_cost"] < doc["plans"]["naive"]["total_cost"]
        packed_row = [r for r in doc["report"] if r["name"] == "packed"][0]
        assert packed_row["pct_savings_vs_baseline"] > 0

    def test_plan_stdout_byte_stable(self, plan_files, capsys):
        w, c = plan_files
        _, out1, _ = run_cli(["plan", "--workload", w, "--catalog", c, "--duration", "2"], capsys)
        _, out2, _ = run_cli(["plan", "--workload", w, "--catalog", c, "--duration", "2"], capsys)
        assert out1 == out2

    def test_missing_file_is_usage_error(self, tmp_path, capsys):
        code, out, err = run_cli(
            ["plan", "--workload", str(tmp_path / "nope.json"), "--catalog", str(tmp_path / "nope.json"), "--duration", "1"],
            capsys,
        )
        assert code == 1
        assert out == ""  # machine output only on success


class TestScanCommand:
    def test_refuses_public_range(self, capsys):
        code, out, err = run_cli(["scan", "--range", "8.8.8.0/28"], capsys)
        assert code == 1
        assert out == ""
        assert "allow_public" in err or "not private" in err

    def test_refuses_wide_range(self, capsys):
        code, _, err = run_cli(["scan", "--range", "10.0.0.0/12", "--allow-public"], capsys)
        assert code == 1
        assert "safety cap" in err

    def test_scan_farm_jsonl(self, small_farm, capsys):
        code, out, err = run_cli(
            [
                "scan",
                "--range", small_farm.cidr,
                "--port", str(small_farm.port),
                "--rate", "100",
                "--concurrency", "6",
                "--timeout", "1",
                "--liveness-delay", "0.3",
            ],
            capsys,
        )
        assert code == 0
        lines = [json.loads(line) for line in out.splitlines() if line]
        assert sum(1 for d in lines if d["disposition"] == "accepted") == 2
        assert "accepted=2" in err

    def test_unknown_subcommand(self, capsys):
        code, _, _ = run_cli(["frobnicate"], capsys)
        assert code == 1

    def test_help_exits_zero(self, capsys):
        assert dispatch(["--help"]) == 0
        capsys.readouterr()


class TestConfigShow:
    def test_defaults(self, capsys):
        code, out, _ = run_cli(["config", "show"], capsys)
        assert code == 0
        cfg = json.loads(out)
        assert cfg["listen"] == "127.0.0.1:8000"
        assert cfg["rate_limit"] == 10.0

    def test_precedence_env_over_file(self, tmp_path, capsys, monkeypatch):
        f = tmp_path / "cfg.json"
        f.write_text(json.dumps({"rate_limit": 3, "listen": "127.0.0.1:9999"}))
        monkeypatch.setenv("CAMNET_RATE", "7")
        code, out, _ = run_cli(["--config", str(f), "config", "show"], capsys)
        cfg = json.loads(out)
        assert cfg["rate_limit"] == 7.0  # env beats file
        assert cfg["listen"] == "127.0.0.1:9999"  # file beats default

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        f = tmp_path / "cfg.json"
        f.write_text(json.dumps({"nonsense": 1}))
        code, _, err = run_cli(["--config", str(f), "config", "show"], capsys)
        assert code == 1
        assert "unknown config keys" in err


class TestIngestCommand:
    def test_one_shot_job(self, small_farm, tmp_path, capsys):
        db = str(tmp_path / "ing.db")
        store = RegistryStore(db)
        ep = small_farm.camera_endpoint("streamcam")
        store.upsert(CameraRecord(id="streamcam", kind="ip_camera", endpoint=StreamEndpoint(url=ep.url, mode="mjpeg_stream")))
        store.close()
        code, out, err = run_cli(
            ["ingest", "--db", db, "--camera", "streamcam", "--fps", "15", "--duration", "2"],
            capsys,
        )
        assert code == 0
        results = json.loads(out)
        assert results["state"] == "finished"
        assert len(results["series"]["streamcam"]) >= 10

    def test_no_cameras_is_usage_error(self, tmp_path, capsys):
        code, _, err = run_cli(["ingest", "--db", str(tmp_path / "x.db")], capsys)
        assert code == 1


class TestTestbedSubprocess:
    def test_up_serves_then_down_stops(self, tmp_path):
        spec = {
            "cameras": [
                {"name": "c1", "brand": "axis", "mode": "snapshot_poll", "fps": 2,
                 "format": "jpeg", "scene": {"kind": "static", "seed": 1}}
            ],
            "decoys": 1,
            "base_cidr": "127.90.0.0/29",
        }
        spec_path = tmp_path / "farm.json"
        spec_path.write_text(json.dumps(spec))
        state_path = str(tmp_path / "state.json")
        proc = subprocess.Popen(
            [sys.executable, "-m", "camnet.cli", "testbed", "up", "--spec", str(spec_path), "--state", state_path],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
        )
        try:
            line = proc.stdout.readline()
            info = json.loads(line)
            cam = [e for e in info["endpoints"] if e["role"] == "camera"][0]
            r = requests.get(cam["url"], timeout=2)
            assert r.status_code == 200
            down = subprocess.run(
                [sys.executable, "-m", "camnet.cli", "testbed", "down", "--state", state_path],
                capture_output=True,
                text=True,
                timeout=15,
            )
            assert down.returncode == 0
            assert json.loads(down.stdout)["stopped"] is True
            assert proc.wait(timeout=10) == 0
            with pytest.raises(requests.exceptions.ConnectionError):
                requests.get(cam["url"], timeout=1)
        finally:
            if proc.poll() is None:
                proc.kill()

    def test_down_without_state(self, tmp_path, capsys):
        code, _, err = run_cli(["testbed", "down", "--state", str(tmp_path / "none.json")], capsys)
        assert code == 1

import csv
import io
import json
import os
import socket
import subprocess
import sys
import time

import pytest
from conftest import TOKEN, make_payload

from gasnet import simnet
from gasnet.cli import ConfigError, ServeConfig, main
from gasnet.http_api import GasnetHTTPServer, ServiceClient, ServiceUnreachable, start_in_thread
from gasnet.service import ApiCredential, IngestService
from gasnet.storage import Store


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def serve_config(tmp_path, port, **kw):
    doc = {"bind": f"127.0.0.1:{port}", "token": TOKEN, "data_dir": str(tmp_path / "data"), **kw}
    return write_json(tmp_path / "serve.json", doc)


def spawn_serve(config_path, env=None):
    return subprocess.Popen(
        [sys.executable, "-m", "gasnet.cli", "serve", "-c", config_path],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
        env={**os.environ, **(env or {})},
    )


def wait_healthy(url, timeout=10.0):
    client = ServiceClient(url, timeout=1)
    deadline = time.monotonic() + timeout
    while True:
        try:
            if client.get("/healthz")[0] == 200:
                return
        except ServiceUnreachable:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.05)


# -- serve config ---------------------------------------------------------------


def test_serve_config_parsing(monkeypatch):
    monkeypatch.delenv("GASNET_TOKEN", raising=False)
    cfg = ServeConfig.from_dict({"bind": "0.0.0.0:9000", "token": TOKEN, "data_dir": "d"})
    assert (cfg.host, cfg.port, cfg.virtual_clock) == ("0.0.0.0", 9000, False)
    monkeypatch.setenv("GASNET_TOKEN", "from-the-environment-1")
    assert ServeConfig.from_dict({"token": "x", "data_dir": "d"}).token == "from-the-environment-1"


@pytest.mark.parametrize(
    "doc, field",
    [
        ({"bind": "nope", "token": TOKEN, "data_dir": "d"}, "bind"),
        ({"token": "short", "data_dir": "d"}, "token"),
        ({"token": TOKEN}, "data_dir"),
        ({"token": TOKEN, "data_dir": "d", "thresholds": {"LPG": [800, 400]}}, "thresholds"),
    ],
)
def test_serve_config_errors_name_the_field(monkeypatch, doc, field):
    monkeypatch.delenv("GASNET_TOKEN", raising=False)
    with pytest.raises(ConfigError, match=field):
        ServeConfig.from_dict(doc)


# -- serve subprocess -------------------------------------------------------------


def test_serve_answers_health_and_stops_on_sigterm(tmp_path):
    port = free_port()
    proc = spawn_serve(serve_config(tmp_path, port))
    try:
        wait_healthy(f"http://127.0.0.1:{port}")
        status, _ = ServiceClient(f"http://127.0.0.1:{port}", TOKEN).post_telemetry(make_payload().to_bytes())
        assert status == 200
    finally:
        proc.terminate()
        out, _ = proc.communicate(timeout=10)
    assert proc.returncode == 0
    assert "listening on" in out
    assert (tmp_path / "data" / "st-01" / "readings-0.ndjson").exists()


def test_serve_bad_token_exits_1(tmp_path):
    proc = spawn_serve(serve_config(tmp_path, free_port(), token="short"), env={"GASNET_TOKEN": ""})
    _, err = proc.communicate(timeout=10)
    assert proc.returncode == 1
    assert "token" in err


def test_serve_port_in_use_exits_2(tmp_path):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        s.listen()
        port = s.getsockname()[1]
        proc = spawn_serve(serve_config(tmp_path, port))
        _, err = proc.communicate(timeout=10)
    assert proc.returncode == 2
    assert "bind" in err


# -- simulate ---------------------------------------------------------------------


def test_simulate_bundled_quiet_day(capsys, tmp_path):
    out_file = tmp_path / "report.json"
    assert main(["simulate", "-c", "quiet_day", "--out", str(out_file)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["totals"]["payloads_sent"] == 144
    assert doc["totals"]["stored"] == 144
    assert json.loads(out_file.read_text()) == doc


def test_simulate_leak_reports_onset(capsys, tmp_path):
    assert main(["simulate", "-c", "leak", "--data", str(tmp_path / "d")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["totals"]["alerts_onset"] >= 1
    assert (tmp_path / "d" / "alerts.ndjson").exists()


def test_simulate_corrupt_config_exits_1(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert main(["simulate", "-c", str(bad)]) == 1
    assert "invalid config" in capsys.readouterr().err


def test_simulate_invalid_station_exits_1(capsys, tmp_path):
    doc = {"duration_s": 600, "stations": [{"station_id": "a/b", "scenario": {"base_ppm": {"LPG": 1, "CO": 1}}}]}
    assert main(["simulate", "-c", write_json(tmp_path / "s.json", doc)]) == 1
    assert "station_id" in capsys.readouterr().err


def test_simulate_unreachable_exits_5(capsys, monkeypatch):
    real = simnet.run_simulation
    monkeypatch.setattr(
        "gasnet.cli.run_simulation", lambda config, **kw: real(config, reconnect_timeout_s=0.2, **kw)
    )
    assert main(["simulate", "-c", "quiet_day", "--http", f"http://127.0.0.1:{free_port()}"]) == 5


def test_simulate_rejected_payloads_exit_3(capsys, tmp_path):
    store = Store(tmp_path / "data")
    server = GasnetHTTPServer(("127.0.0.1", 0), IngestService(store, ApiCredential("another-token-00000")))
    start_in_thread(server)
    try:
        assert main(["simulate", "-c", "quiet_day", "--http", server.url]) == 3
    finally:
        server.shutdown()
        server.server_close()
        store.close()
    assert "401" in capsys.readouterr().err


# -- report -----------------------------------------------------------------------


@pytest.fixture
def data_dir(tmp_path):
    root = tmp_path / "data"
    with Store(root) as s:
        s.append_reading(make_payload(ts=600, seq=0, lpg=12.3, co=4.0), 601.5)
        s.append_reading(make_payload(ts=1200, seq=1, lpg=512.0, co=7.5), 1201.5)
    return root


def test_report_csv_local(capsys, data_dir):
    assert main(["report", "--source", str(data_dir), "--station", "st-01", "--format", "csv"]) == 0
    text = capsys.readouterr().out
    rows = list(csv.reader(io.StringIO(text)))
    assert len(rows) == 3
    assert rows[0][:2] == ["ts", "lpg_ppm"]
    assert [float(r[1]) for r in rows[1:]] == [12.3, 512.0]
    assert [round(float(r[1]), 1) for r in rows[1:]] == [float(r[1]) for r in rows[1:]]
    assert rows[2][-1] == "true"


def test_report_table_and_range(capsys, data_dir):
    assert main(["report", "--source", str(data_dir), "--station", "st-01", "--from", "1000"]) == 0
    out = capsys.readouterr().out
    assert "512.0" in out and "12.3" not in out
    assert "HAZARDOUS" in out


def test_report_hourly_json(capsys, data_dir):
    assert main(["report", "--source", str(data_dir), "--station", "st-01", "--hourly", "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [b["count"] for b in doc] == [2]


def test_report_unknown_station_exits_4(capsys, data_dir):
    assert main(["report", "--source", str(data_dir), "--station", "ghost"]) == 4


def test_report_unreachable_exits_5(capsys):
    assert main(["report", "--source", f"http://127.0.0.1:{free_port()}", "--station", "st-01"]) == 5


def test_report_local_equals_remote(capsys, data_dir):
    store = Store(data_dir)
    server = GasnetHTTPServer(("127.0.0.1", 0), IngestService(store, ApiCredential(TOKEN)))
    start_in_thread(server)
    try:
        for fmt in ("table", "csv", "json"):
            for extra in ([], ["--hourly"]):
                args = ["report", "--station", "st-01", "--format", fmt, *extra]
                assert main([*args, "--source", str(data_dir)]) == 0
                local = capsys.readouterr().out
                assert main([*args, "--source", server.url]) == 0
                assert capsys.readouterr().out == local
        assert main(["report", "--station", "ghost", "--source", server.url]) == 4
    finally:
        server.shutdown()
        server.server_close()
        store.close()


def test_report_does_not_modify_store(capsys, data_dir):
    seg = data_dir / "st-01" / "readings-0.ndjson"
    torn = seg.read_bytes() + b'{"station_id":'
    seg.write_bytes(torn)
    assert main(["report", "--source", str(data_dir), "--station", "st-01", "--format", "csv"]) == 0
    assert seg.read_bytes() == torn

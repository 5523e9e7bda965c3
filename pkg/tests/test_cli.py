import json
import socket
import subprocess
import sys

import pytest

from exosense import cli, runtime


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_synth_train_stream_bench(tmp_path, capsys):
    sc = tmp_path / "tiny.json"
    sc.write_text(json.dumps({"kind": "perturbation", "duration_s": 20.0, "pulse_count": 2}))
    data = tmp_path / "data"
    assert run("synth", "--scenario", sc, "--subjects", 2, "--seed", 3, "--out", data) == 0
    assert sorted(p.name for p in data.iterdir()) == ["S01", "S02", "scenario.json"]

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train": {"epochs": 1}}))
    models = tmp_path / "models"
    assert run("train", "--task", "risk", "--data", data, "--config", cfg, "--out", models) == 0
    assert (models / "risk" / "weights.bin").exists()

    capsys.readouterr()
    assert run("bench", "--task", "risk", "--model", models / "risk", "--iters", 100) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["task"] == "risk" and stats["p95_ms"] > 0

    out = tmp_path / "packets.jsonl"
    assert run("stream", "--session", data / "S01", "--duration", 5, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 25
    assert all(runtime.decode_packet(x) for x in lines)


def test_eval_writes_report(tmp_path):
    data = tmp_path / "data"
    sc = tmp_path / "tiny.json"
    sc.write_text(json.dumps({"kind": "perturbation", "duration_s": 15.0, "pulse_count": 1}))
    run("synth", "--scenario", sc, "--subjects", 2, "--seed", 1, "--out", data)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train": {"epochs": 1}}))
    rep = tmp_path / "rep"
    assert run("eval", "--task", "risk", "--data", data, "--config", cfg, "--report", rep, "--no-plots") == 0
    doc = json.loads((rep / "report.json").read_text())
    assert [f["subject"] for f in doc["folds"]] == ["S01", "S02"]


def test_errors_exit_nonzero(tmp_path, capsys):
    assert run("train", "--task", "risk", "--data", tmp_path, "--out", tmp_path / "m") == 2
    assert "no session bundles" in capsys.readouterr().err
    assert run("stream", "--live-synth", "--models", tmp_path, "--duration", 1) == 2
    with pytest.raises(SystemExit):
        run("stream")


def test_live_synth_udp_subprocess(tmp_path):
    rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    rx.bind(("127.0.0.1", 0))
    rx.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 20)
    rx.settimeout(5.0)
    port = rx.getsockname()[1]
    proc = subprocess.run(
        [sys.executable, "-m", "exosense", "stream", "--live-synth", "--udp", f"127.0.0.1:{port}", "--duration", "4"],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    got = []
    rx.settimeout(0.5)
    try:
        while True:
            got.append(runtime.decode_packet(rx.recv(2048)))
    except socket.timeout:
        pass
    rx.close()
    assert len(got) == 20
    assert "20 packets, 0 dropped" in proc.stdout

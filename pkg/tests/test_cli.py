"""CLI surface: serve boot checks, sim run/verify exit codes, dump/restore."""

import json
import socket
import subprocess
import sys
import time
from pathlib import Path

import requests

from carekernel.cli import main

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def test_dump_restore_cycle(tmp_path, capsys):
    db = tmp_path / "a.db"
    from carekernel.storage import open_storage
    storage = open_storage(db)
    with storage.tx():
        storage.execute(
            "INSERT INTO studies (study_id, name, locale, timezone, status, "
            "secret, created_at) VALUES ('s1', 'N', 'en', 'UTC', 'active', "
            "'x', '2026-01-01T00:00:00+00:00')")
    storage.close()
    archive = tmp_path / "archive.json"
    assert main(["dump", "--db", str(db), "--out", str(archive)]) == 0
    restored = tmp_path / "b.db"
    assert main(["restore", "--db", str(restored), "--archive", str(archive)]) == 0
    check = open_storage(restored)
    assert check.query_one("SELECT name FROM studies")["name"] == "N"
    check.close()


def test_serve_refuses_malformed_matrix(tmp_path, capsys):
    bad = tmp_path / "matrix.json"
    bad.write_text(json.dumps({"format": 1, "version": 1, "roles": ["admin"],
                               "permissions": {}}))
    code = main(["serve", "--db", str(tmp_path / "x.db"),
                 "--matrix", str(bad)])
    assert code == 1
    assert "refusing to start" in capsys.readouterr().err


def _wait_for(url, proc):
    for _ in range(100):
        try:
            requests.get(f"{url}/health", timeout=0.5)
            return
        except requests.ConnectionError:
            assert proc.poll() is None, "server died"
            time.sleep(0.1)
    raise AssertionError("server never came up")


def test_sim_run_and_verify_via_cli(tmp_path):
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
    proc = subprocess.Popen(
        [sys.executable, "-m", "carekernel.cli", "serve",
         "--db", str(tmp_path / "sim.db"), "--port", str(port),
         "--simulation", "--bootstrap-admin-secret", "cli-secret"],
        stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    url = f"http://127.0.0.1:{port}"
    try:
        _wait_for(url, proc)
        out = tmp_path / "t.jsonl"
        run = subprocess.run(
            [sys.executable, "-m", "carekernel.cli", "sim", "run",
             str(SCENARIOS / "triage.yaml"), "--server", url,
             "--admin-secret", "cli-secret", "--speed", "instant",
             "--out", str(out)],
            capture_output=True, text=True)
        assert run.returncode == 0, run.stderr
        summary = json.loads(run.stdout)
        assert summary["study_id"] == "triage-study"

        verify = subprocess.run(
            [sys.executable, "-m", "carekernel.cli", "sim", "verify",
             str(out), str(SCENARIOS / "triage.assert.yaml")],
            capture_output=True, text=True)
        assert verify.returncode == 0
        assert verify.stdout.strip() == "pass"

        bad = tmp_path / "bad.yaml"
        bad.write_text("assertions:\n- {kind: outbox_count, channel: email, equals: 7}\n")
        failing = subprocess.run(
            [sys.executable, "-m", "carekernel.cli", "sim", "verify",
             str(out), str(bad)],
            capture_output=True, text=True)
        assert failing.returncode == 1
        assert failing.stdout.startswith("FAIL")
    finally:
        proc.kill()
        proc.wait()


def test_report_via_cli(tmp_path):
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
    proc = subprocess.Popen(
        [sys.executable, "-m", "carekernel.cli", "serve",
         "--db", str(tmp_path / "rep.db"), "--port", str(port),
         "--simulation", "--bootstrap-admin-secret", "cli-secret"],
        stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    url = f"http://127.0.0.1:{port}"
    try:
        _wait_for(url, proc)
        subprocess.run(
            [sys.executable, "-m", "carekernel.cli", "sim", "run",
             str(SCENARIOS / "triage.yaml"), "--server", url,
             "--admin-secret", "cli-secret", "--speed", "instant",
             "--out", str(tmp_path / "t.jsonl")],
            check=True, capture_output=True)
        out_dir = tmp_path / "report"
        run = subprocess.run(
            [sys.executable, "-m", "carekernel.cli", "report", "summary",
             "--server", url, "--credential", "cli-secret",
             "--study", "triage-study", "--date", "2026-01-05",
             "--out", str(out_dir)],
            capture_output=True, text=True)
        assert run.returncode == 0, run.stderr
        assert (out_dir / "summary.csv").exists()
        assert (out_dir / "coverage.png").exists()
    finally:
        proc.kill()
        proc.wait()

import json
import re
import subprocess
import sys
from pathlib import Path

import pytest

from qfuzzy.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_LINK, EXIT_OK, main

FAST_GA = {"population": 4, "generations": 2, "seed": 0}


def csv_bytes(d: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


def run_twice(tmp_path, argv):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(argv + ["--out", str(out)]) == EXIT_OK
        outs.append(csv_bytes(out))
    assert outs[0] and outs[0] == outs[1]
    return outs[0]


def write_json(path: Path, doc) -> str:
    path.write_text(json.dumps(doc))
    return str(path)


# ------------------------------------------------------------- determinism

def test_simulate_deterministic(tmp_path):
    files = run_twice(tmp_path, ["simulate", "--scenario", "S3", "--controller", "fc2", "--seed", "4"])
    assert set(files) == {"run.csv", "run_series.csv"}


def test_qfi_run_deterministic(tmp_path):
    run_twice(tmp_path, ["qfi-run", "--scenario", "S1", "--mode", "spatiotemporal", "--lag", "2",
                         "--scales", "0.8", "0.9", "0.4", "--seed", "1"])


def test_compare_deterministic(tmp_path):
    files = run_twice(tmp_path, ["compare", "--controllers", "pid", "fc1", "--scenarios", "S1", "B2-S1",
                                 "--repetitions", "2", "--seed", "3"])
    assert files["compare.csv"].count(b"\n") == 5


def test_optimize_deterministic(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", {"ga": FAST_GA, "horizon": 1.0, "mf_range": [3, 3],
                                             "bp_steps": 20})
    files = run_twice(tmp_path, ["optimize", "--scenario", "S1", "--config", cfg])
    assert {"ts.csv", "stages.csv"} <= set(files)


def test_optimize_remote_pipe_deterministic(tmp_path):
    ga = write_json(tmp_path / "ga.json", FAST_GA)
    files = run_twice(tmp_path, ["optimize-remote", "--connect", "pipe", "--kind", "scale",
                                 "--controller", "qfi-s", "--scenario", "S3", "--cycles", "50", "--ga", ga])
    assert set(files) == {"best.csv", "history.csv"}


def test_lock_and_thermo_demos_deterministic(tmp_path):
    files = run_twice(tmp_path, ["lock-demo", "--n", "1", "2"])
    rows = [r.split(b",") for r in files["locking.csv"].splitlines()[1:]]
    assert [int(r[0]) for r in rows] == [2, 4]
    assert [float(r[1]) for r in rows] == pytest.approx([0.5, 1.0], abs=1e-9)
    assert [float(r[2]) for r in rows] == pytest.approx([2.0, 3.0], abs=1e-9)
    run_twice(tmp_path / "t", ["thermo-demo", "--dim", "4", "--seed", "2"])


def test_report_reemits_series(tmp_path):
    assert main(["simulate", "--scenario", "S1", "--out", str(tmp_path)]) == EXIT_OK
    files = run_twice(tmp_path / "r", ["report", "--input", str(tmp_path / "run_series.csv")])
    assert "report_metrics.csv" in files
    assert main(["compare", "--controllers", "pid", "--scenarios", "S1", "--out", str(tmp_path)]) == EXIT_OK
    assert main(["report", "--input", str(tmp_path / "compare.csv"), "--format", "csv",
                 "--out", str(tmp_path / "t")]) == EXIT_OK


def test_config_file_supplies_defaults(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"scenario": {"name": "mine", "duration": 1.0,
                                                        "initial": [-2, 0, 0, 0]},
                                           "controller": {"kind": "pid_fixed", "gains": [21.3, 225.9, 0.1]}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "run_series.csv").read_text().count("\n") == 102


# --------------------------------------------------------------- exit codes

@pytest.mark.parametrize("argv", [
    ["simulate", "--scenario", "S99"],
    ["simulate", "--controller", "pid:1,2"],
    ["simulate", "--controller", "fc:missing.json"],
    ["simulate", "--config", "/nonexistent/cfg.json"],
    ["compare", "--controllers", "nope"],
    ["frobnicate"],
])
def test_config_errors_exit_2(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_config_json_exit_2(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG
    p.write_text(json.dumps({"scenario": {"delay": 0.015}}))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_required_run_divergence_exit_3(tmp_path):
    argv = ["simulate", "--scenario", "S3", "--controller", "fc1", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    assert main(argv + ["--require-stable"]) == EXIT_DIVERGED


def test_link_error_exit_4(tmp_path):
    import socket
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    assert main(["optimize-remote", "--connect", f"127.0.0.1:{port}", "--out", str(tmp_path)]) == EXIT_LINK


def test_serve_device_and_connect_over_tcp(tmp_path):
    ga = write_json(tmp_path / "ga.json", FAST_GA)
    proc = subprocess.Popen(
        [sys.executable, "-m", "qfuzzy.cli", "serve-device", "--listen", "127.0.0.1:0", "--kind", "scale",
         "--controller", "qfi-s", "--scenario", "S3", "--cycles", "50", "--out", str(tmp_path / "dev")],
        stdout=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        port = int(re.search(r":(\d+)$", line.strip()).group(1))
        rc = main(["optimize-remote", "--connect", f"127.0.0.1:{port}", "--kind", "scale", "--ga", ga,
                   "--out", str(tmp_path / "opt")])
        assert rc == EXIT_OK
        assert proc.wait(30) == EXIT_OK
    finally:
        proc.kill()
    # the TCP session reproduces the in-process one
    assert main(["optimize-remote", "--connect", "pipe", "--kind", "scale", "--controller", "qfi-s",
                 "--scenario", "S3", "--cycles", "50", "--ga", ga, "--out", str(tmp_path / "pipe")]) == EXIT_OK
    assert (tmp_path / "opt" / "best.csv").read_bytes() == (tmp_path / "pipe" / "best.csv").read_bytes()
    session = (tmp_path / "dev" / "session.csv").read_text().splitlines()
    # population 4, two generations, elitism 1: 4 + 3 evaluations
    assert len(session) == 1 + 4 + 3

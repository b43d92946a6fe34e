import json
import signal
import subprocess
import sys
import time

import pytest

from augscout.cli import main

STUB = ["--arch", "stub", "--plugin", "stub_trainers", "--samples-per-class", "10"]


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_plan_reports_budget(capsys):
    code, out, _ = run_cli(capsys, "plan")
    assert code == 0
    assert out.splitlines()[0] == "112 jobs"
    assert "1860 baseline jobs" in out and "16.61" in out
    assert "crop dims: 32 31 30 29 28 27 26 25 24 22 21" in out


def test_bad_grid_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["plan", "--grid", "5,abc"])
    assert info.value.code == 2


def test_bad_runs_is_usage_error(capsys):
    code, _, err = run_cli(capsys, "plan", "--runs", "0")
    assert code == 2 and "--runs" in err


def test_resume_without_store(capsys, tmp_path):
    code, _, err = run_cli(capsys, "run", "--resume", "--out", str(tmp_path))
    assert code == 1 and "NoData" in err


def test_run_analyze_report_refine(capsys, tmp_path, train_log):
    store = tmp_path / "store"
    code, out, _ = run_cli(capsys, "run", *STUB, "--grid", "0,20,40", "--runs", "2", "--out", str(store))
    assert code == 0 and "trained 6 jobs" in out and train_log() == 6

    code, out, _ = run_cli(capsys, "run", "--resume", "--plugin", "stub_trainers", "--out", str(store))
    assert code == 0 and "trained 0 jobs" in out and train_log() == 6

    code, out, _ = run_cli(capsys, "analyze", "--store", str(store))
    assert code == 0 and "robustness ranking" in out and "ideal accuracy" in out

    code, out, _ = run_cli(capsys, "analyze", "--store", str(store), "--json")
    assert json.loads(out)[0]["peaks"]

    rep = tmp_path / "rep"
    code, out, _ = run_cli(capsys, "report", "--store", str(store), "--out", str(rep), "--formats", "csv,table")
    assert code == 0 and (rep / "report.csv").exists() and (rep / "report_0.table.txt").exists()

    code, out, _ = run_cli(capsys, "analyze", "--results", str(rep / "report.csv"))
    assert code == 0

    child = tmp_path / "child"
    code, out, _ = run_cli(capsys, "refine", "--from", str(store), "--alpha-min", "36", "--alpha-max", "44",
                           "--out", str(child))
    assert code == 0 and out.splitlines()[0] == "6 jobs" and "alphas: 36 40 43" in out

    code, out, _ = run_cli(capsys, "refine", "--from", str(store), "--alpha-min", "36", "--alpha-max", "36",
                           "--out", str(tmp_path / "x"))
    assert code == 1


def test_partial_failure_exit_code(capsys, tmp_path, train_log, monkeypatch):
    monkeypatch.setenv("STUB_FAIL_ALPHAS", "20")
    code, _, err = run_cli(capsys, "run", *STUB, "--grid", "0,20", "--runs", "1", "--out", str(tmp_path))
    assert code == 1 and "PartialCompletion" in err


def test_analyze_fixtures(capsys):
    code, out, _ = run_cli(capsys, "analyze", "--table", "with_flip")
    assert code == 0 and "0.49985" in out
    code, out, _ = run_cli(capsys, "analyze", "--fixture", "cifar10_mean")
    assert "peak alpha   10" in out and "increase to 10, fall to 70" in out


def test_analyze_needs_input(capsys):
    code, _, err = run_cli(capsys, "analyze")
    assert code == 2


def test_fixtures_command(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "fixtures", "--variant", "without_flip")
    assert code == 0 and "chair" in out.split("\n")[2]
    out_path = tmp_path / "t.json"
    code, _, _ = run_cli(capsys, "fixtures", "--format", "json", "--out", str(out_path))
    assert json.loads(out_path.read_text())["kind"] == "fixture_table"


def test_synth_command(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "synth", "--samples-per-class", "4", "--dump-alpha", "50", "--out", str(tmp_path))
    assert code == 0 and (tmp_path / "synthetic.npz").exists() and (tmp_path / "augmented_samples.png").exists()
    meta = json.loads((tmp_path / "synthetic.json").read_text())
    assert meta["expected_robustness_order"][-1] == "corner_mark"


def test_tune_command(capsys):
    code, out, _ = run_cli(capsys, "tune", "--samples-per-class", "10", "--lrs", "0.05", "--epoch-grid", "2",
                           "--batch-sizes", "16", "32")
    assert code == 0 and json.loads(out[out.index("{"):])["architecture_id"] == "linear_probe"


def _records(store):
    runs = store / "runs"
    return len(list(runs.glob("*.json"))) if runs.exists() else 0


def test_kill_mid_run_then_resume(tmp_path, subprocess_env):
    log = tmp_path / "train.log"
    env = dict(subprocess_env, STUB_TRAIN_LOG=str(log), STUB_DELAY="0.3")
    store = tmp_path / "store"
    cmd = [sys.executable, "-m", "augscout.cli", "run", *STUB, "--grid", "0,10,20,30,40", "--runs", "2",
           "--out", str(store)]
    proc = subprocess.Popen(cmd, env=env, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    deadline = time.time() + 120
    while _records(store) < 3 and time.time() < deadline:
        time.sleep(0.05)
    proc.send_signal(signal.SIGKILL)
    proc.wait()
    completed = _records(store)
    assert 3 <= completed < 10
    before = len(log.read_text().splitlines())

    env["STUB_DELAY"] = "0"
    res = subprocess.run([sys.executable, "-m", "augscout.cli", "run", "--resume", "--plugin", "stub_trainers",
                          "--out", str(store)], env=env, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert len(log.read_text().splitlines()) - before == 10 - completed
    assert f"trained {10 - completed} jobs" in res.stdout and _records(store) == 10
    assert not list(store.rglob("*.tmp"))

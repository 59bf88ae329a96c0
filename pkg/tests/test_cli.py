import json
import re
import subprocess
import sys
from pathlib import Path

import pytest

from opwatt.cli import main
from opwatt.simulator import parse_truth
from opwatt.trace import read_trace


def run(*argv):
    return main([str(a) for a in argv])


def simulate(out, scenario="fixed-single", n=50, seed=7, zero=False):
    args = ["simulate", "--scenario", scenario, "--seed", seed, "--intervals", n, "--out", out]
    assert run(*args, *(["--zero-noise"] if zero else [])) == 0
    return sorted(Path(out).glob("*.trace"))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Zero-noise fixed-single run, trained with a one-point SVR grid."""
    base = tmp_path_factory.mktemp("cli")
    traces = simulate(base / "sim", n=60, zero=True)
    cfg = base / "small.yaml"
    cfg.write_text("cv:\n  C: [10.0]\n  epsilon: [0.5]\n  kernels: [linear]\n  outer: 4\n  inner: 2\n")
    assert run("train", "--config", cfg, "--out", base / "train", *traces) == 0
    return base, traces, cfg


def test_simulate_counts_intervals_and_is_byte_identical(tmp_path, capsys):
    a = simulate(tmp_path / "a")
    out = capsys.readouterr().out
    assert "intervals: 50" in out
    assert sum(len(read_trace(p).soc_events) - 1 for p in a) == 50
    b = simulate(tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
        assert pa.with_suffix(".truth").read_bytes() == pb.with_suffix(".truth").read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma == mb and ma["seeds"] == [7] and ma["command"] == "simulate"
    assert len(ma["config_hash"]) == 64 and ma["version"]


def test_simulate_two_state_truth(tmp_path):
    simulate(tmp_path, "two-state:8,0.5", n=5)
    truth = parse_truth(next(tmp_path.glob("*.truth")).read_text())
    powers = sorted(p for p in truth.operator_powers.values())
    assert len(powers) == 2 and powers[1] / powers[0] == pytest.approx(8.0)


def test_train_zero_noise_chooses_linear(trained):
    base, _, _ = trained
    summary = json.loads((base / "train" / "cv_report.json").read_text())
    assert summary["chosen"] == "linear"
    assert summary["train_rmse_s"]["linear"] < 1e-3
    doc = json.loads((base / "train" / "model.json").read_text())
    assert doc["family"] == "linear"
    for name in ("model-svr.json", "filter_report.csv", "samples.csv", "mapper.json", "manifest.json"):
        assert (base / "train" / name).exists()


def test_evaluate_attribute_predict_report(trained, tmp_path, capsys):
    base, traces, _ = trained
    model = base / "train" / "model.json"
    run_dir = tmp_path / "run"
    assert run("evaluate", "--model", model, "--out", run_dir, *traces) == 0
    acc = float(re.search(r"accuracy ([\d.]+)%", capsys.readouterr().out).group(1))
    assert acc > 99.9
    assert json.loads((run_dir / "metrics.json").read_text())["accuracy_pct"] > 99.9

    assert run("attribute", "--model", model, "--out", run_dir, *traces) == 0
    text = (run_dir / "attribution.csv").read_text()
    assert text.startswith("operator,relative_power,absolute_w,dyn_w,flag\n")
    nq = next(ln for ln in text.splitlines() if ln.startswith("NQ,"))
    assert float(nq.split(",")[2]) == pytest.approx(0.717 + 2.483, rel=0.01)
    assert (run_dir / "ledger.csv").read_text().startswith("interval,start_s,end_s,active,power_w,energy_j\n")

    assert run("predict", "--model", model, "--out", run_dir, traces[0]) == 0
    lines = (run_dir / "epochs.csv").read_text().splitlines()
    assert lines[0] == "epoch_start_s,predicted_interval_s,avg_power_w,NQ_w"
    assert len(lines) > 10
    assert all(float(ln.split(",")[2]) == pytest.approx(3.2, rel=0.01) for ln in lines[1:])

    capsys.readouterr()
    assert run("report", run_dir) == 0
    svg = (run_dir / "predicted_vs_actual.svg").read_text()
    n_rows = len((run_dir / "predictions.csv").read_text().splitlines()) - 1
    ids = set(re.findall(r'data-id="interval (\d+)"', svg))
    assert ids == {str(i) for i in range(n_rows)}
    assert "seconds" in svg and "watts" in (run_dir / "attribution.svg").read_text()
    assert (run_dir / "index.md").exists() and (run_dir / "epochs.svg").exists()


def test_data_errors_exit_2(trained, tmp_path, capsys):
    base, traces, _ = trained
    bad = tmp_path / "bad.trace"
    bad.write_text("HDR v=1 poll_ms=1000 e1pct_j=100\nPOLL 2000 NQ:1\nPOLL 1000 NQ:1\n")
    assert run("train", "--out", tmp_path / "o", bad) == 2
    assert "line 3" in capsys.readouterr().err
    other = tmp_path / "other"
    other_traces = simulate(other, "fixed-concurrent", n=5)
    assert run("evaluate", "--model", base / "train" / "model.json", "--out", tmp_path / "e", *other_traces) == 2
    assert "schema" in capsys.readouterr().err
    assert run("train", "--out", tmp_path / "o", tmp_path / "missing.trace") == 2
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run("report", empty) == 2
    assert "nothing to report" in capsys.readouterr().err


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run("simulate", "--bogus-flag") == 1
    assert run("frobnicate") == 1
    cfg = tmp_path / "c.yaml"
    cfg.write_text("scenaro: fixed-single\n")
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 1
    assert "unknown key" in capsys.readouterr().err
    assert run("simulate", "--config", tmp_path / "nope.yaml", "--out", tmp_path) == 1
    assert run("experiment", "no-such-kind") == 1


def test_ingest_writes_samples(trained, tmp_path):
    _, traces, _ = trained
    assert run("ingest", "--out", tmp_path, *traces) == 0
    assert (tmp_path / "samples.csv").read_text().splitlines()[0].endswith("NQ")
    assert "# summary input=60" in (tmp_path / "filter_report.csv").read_text()


def test_experiment_tiny_sweep(tmp_path):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text("experiment:\n  ratios: [1, 8]\n  n: 60\n  replications: 2\n"
                   "cv:\n  C: [10.0]\n  epsilon: [1.0]\n  gamma_scale: [1.0]\n  outer: 3\n  inner: 2\n")
    assert run("experiment", "power-ratio", "--config", cfg, "--out", tmp_path) == 0
    rows = (tmp_path / "experiment-power-ratio.csv").read_text().splitlines()
    assert rows[0].startswith("ratio,replications,linear_rmse_s,svr_rmse_s,gain_pct")
    assert len(rows) == 3
    assert len((tmp_path / "experiment-power-ratio-replications.csv").read_text().splitlines()) == 5
    assert run("report", tmp_path) == 0
    assert (tmp_path / "experiment-power-ratio.svg").exists()


@pytest.mark.slow
def test_train_two_state_ratio_8_chooses_svr(tmp_path, capsys):
    traces = simulate(tmp_path / "sim", "two-state:8,0.5", n=400, seed=0)
    assert run("train", "--out", tmp_path / "train", *traces) == 0
    summary = json.loads((tmp_path / "train" / "cv_report.json").read_text())
    assert summary["chosen"] == "svr", summary


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "opwatt.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("opwatt ")

import csv
import json

import numpy as np
import pytest

from augda.cli import main, sha256
from augda.dag import AugmentedDag


def run(*argv):
    return main([str(a) for a in argv])


def rows(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert run("simulate", "--run-dir", d, "--seed", 4, "--n-per-domain", 200) == 0
    assert run("learn-graph", "--run-dir", d, "--seed", 4, "--max-samples", 400) == 0
    assert run("train", "--run-dir", d, "--seed", 4, "--epochs", 3) == 0
    assert run("predict", "--run-dir", d, "--seed", 4, "--prediction-samples", 2) == 0
    return d


def test_simulate_default_layout(tmp_path):
    assert run("simulate", "--run-dir", tmp_path) == 0
    data = tmp_path / "data"
    assert sorted(p.name for p in data.glob("source_*.csv")) == ["source_0.csv", "source_1.csv"]
    assert len(rows(data / "source_0.csv")) == 501
    assert rows(data / "source_0.csv")[0] == [f"X{i}" for i in range(1, 8)] + ["label"]
    assert len(rows(data / "target.csv")) == 501 and len(rows(data / "truth.csv")) == 501
    man = json.loads((tmp_path / "manifest_simulate.json").read_text())
    assert man["seed"] == 0 and man["config"]["run"]["seed"] == 0
    for rel, digest in man["artifacts"].items():
        assert sha256(tmp_path / rel) == digest


def test_simulate_nine_sources_and_rerun_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("simulate", "--run-dir", d, "--n-domains", 9, "--n-per-domain", 50, "--seed", 3) == 0
    assert len(list((a / "data").glob("source_*.csv"))) == 9
    for p in (a / "data").iterdir():
        assert p.read_bytes() == (b / "data" / p.name).read_bytes()
    assert (a / "manifest_simulate.json").read_bytes() == (b / "manifest_simulate.json").read_bytes()


def test_learn_graph_outputs(pipeline_dir):
    g = pipeline_dir / "graph"
    text = (g / "graph.json").read_text()
    assert AugmentedDag.from_json(text).to_json() + "\n" == text
    assert (g / "graph.dot").read_text().startswith("digraph")
    assert "changing modules" in (g / "report.txt").read_text()


def test_learn_graph_invariant_data_reports_no_change(tmp_path, capsys):
    assert run("simulate", "--run-dir", tmp_path, "--theta-scale", 0, "--n-per-domain", 300,
               "--seed", 1) == 0
    assert run("learn-graph", "--run-dir", tmp_path, "--max-samples", 600) == 0
    assert "no changing modules detected" in capsys.readouterr().out


def test_train_and_predict_outputs(pipeline_dir):
    m = pipeline_dir / "model"
    log = rows(m / "training_log.csv")
    assert log[0][:2] == ["epoch", "loss"] and len(log) == 4
    post = json.loads((m / "posterior.json").read_text())
    assert list(post) == ["source0", "source1", "target"]
    pred = rows(pipeline_dir / "predictions" / "target_predictions.csv")
    assert pred[0] == ["p_0", "p_1", "label"] and len(pred) == 201
    p = np.array([[float(v) for v in r[:2]] for r in pred[1:]])
    assert np.abs(p.sum(axis=1) - 1).max() <= 1e-9
    assert [int(r[2]) for r in pred[1:]] == list(p.argmax(axis=1))


def test_evaluate_run_mode_metrics(pipeline_dir):
    assert run("evaluate", "--run-dir", pipeline_dir, "--seed", 4, "--mode", "run") == 0
    metrics = json.loads((pipeline_dir / "evaluate" / "metrics.json").read_text())
    assert set(metrics) == {"infer", "pool", "n_replicates"}
    assert set(metrics["infer"]) == {"mean", "std"} and metrics["n_replicates"] == 1
    assert 0 <= metrics["infer"]["mean"] <= 100


def test_evaluate_replicates_schema(tmp_path):
    assert run("evaluate", "--run-dir", tmp_path, "--replicates", 2, "--n-per-domain", 100,
               "--epochs", 1, "--prediction-samples", 2) == 0
    metrics = json.loads((tmp_path / "evaluate" / "metrics.json").read_text())
    assert metrics["n_replicates"] == 2 and set(metrics["pool"]) == {"mean", "std"}
    reps = rows(tmp_path / "evaluate" / "replicates.csv")
    assert reps[0] == ["replicate", "seed", "infer", "pool", "changing"] and len(reps) == 3


def test_pipeline_byte_identical_across_runs(tmp_path, pipeline_dir):
    d = tmp_path / "again"
    assert run("simulate", "--run-dir", d, "--seed", 4, "--n-per-domain", 200) == 0
    assert run("learn-graph", "--run-dir", d, "--seed", 4, "--max-samples", 400) == 0
    assert run("train", "--run-dir", d, "--seed", 4, "--epochs", 3) == 0
    assert run("predict", "--run-dir", d, "--seed", 4, "--prediction-samples", 2) == 0
    rel = "predictions/target_predictions.csv"
    assert (d / rel).read_bytes() == (pipeline_dir / rel).read_bytes()
    for name in ("manifest_train.json", "manifest_predict.json", "model/bundle.bin"):
        assert (d / name).read_bytes() == (pipeline_dir / name).read_bytes()


def test_demo_posterior(tmp_path):
    assert run("demo-posterior", "--run-dir", tmp_path, "--v", 1, 4, 8) == 0
    out = tmp_path / "posterior"
    assert sorted(p.name for p in out.glob("density_*.csv")) == \
        ["density_v1.csv", "density_v4.csv", "density_v8.csv"]
    modes = {}
    for v in (1, 4, 8):
        r = np.array(rows(out / f"density_v{v}.csv")[1:], dtype=float)
        assert abs(np.trapezoid(r[:, 1], r[:, 0]) - 1) <= 1e-6
        modes[v] = r[np.argmax(r[:, 1]), 0]
    assert modes[1] < modes[8]


def test_figures_flag_writes_png(tmp_path):
    assert run("demo-posterior", "--run-dir", tmp_path, "--v", 2, "--figures") == 0
    png = tmp_path / "posterior" / "posterior.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    man = json.loads((tmp_path / "manifest_demo_posterior.json").read_text())
    assert "posterior/posterior.png" in man["artifacts"]


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nunknown = 1\n")
    assert run("simulate", "--run-dir", tmp_path, "--config", bad) == 2
    assert run("train", "--run-dir", tmp_path / "empty") == 3
    assert run("demo-posterior", "--run-dir", tmp_path, "--v", -1) == 3
    assert run("predict", "--run-dir", tmp_path, "--source", tmp_path / "missing.csv",
               "--target", tmp_path / "t.csv") == 3
    assert "error:" in capsys.readouterr().err


def test_auto_named_run_dir(tmp_path):
    assert run("demo-posterior", "--runs-root", tmp_path, "--seed", 9, "--v", 1) == 0
    (d,) = list(tmp_path.iterdir())
    assert d.name.endswith("_seed9") and (d / "posterior" / "density_v1.csv").exists()

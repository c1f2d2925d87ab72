"""Command line: simulate, learn-graph, train, predict, evaluate, demo-posterior.

All artifacts of a run live under one run directory (``--run-dir``, or
``<runs-root>/<timestamp>_seed<seed>`` when not given).  Each command writes
``manifest_<command>.json`` with the configuration, the seed and SHA-256
hashes of the files it produced.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from augda import __version__
from augda.config import RunConfig, load_config
from augda.dag import AugmentedDag, benchmark_dag
from augda.data import MultiDomainDataset, load_csv, simulate, write_csv, write_metadata
from augda.errors import AugdaError, ConfigError, DataError
from augda.generative import load_bundle, save_bundle
from augda.graph import learn_augmented_dag
from augda.inference import (
    ThetaPosterior,
    gamma_posterior_demo,
    pooled_baseline,
    predict_target,
    train,
)
from augda.pipeline import evaluate_replicates, simulation_spec

log = logging.getLogger("augda")

OVERRIDES = {
    # argparse dest -> (section, key)
    "seed": ("run", "seed"),
    "figures": ("run", "figures"),
    "jobs": ("run", "jobs"),
    "n_domains": ("simulation", "n_domains"),
    "n_per_domain": ("simulation", "n_per_domain"),
    "theta_scale": ("simulation", "theta_scale"),
    "label_link": ("simulation", "label_link"),
    "alpha": ("graph", "alpha"),
    "max_samples": ("graph", "max_samples"),
    "epochs": ("train", "epochs"),
    "batch_size": ("train", "batch_size"),
    "prediction_samples": ("train", "prediction_samples"),
    "replicates": ("evaluate", "replicates"),
    "graph_mode": ("evaluate", "graph"),
}


# ----------------------------------------------------------------- helpers

def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return Path(path)


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return Path(path)


def _fmt(v):
    return format(float(v), ".17g")


def resolve_run_dir(args, config):
    if args.run_dir:
        run_dir = Path(args.run_dir)
    else:
        stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
        run_dir = Path(args.runs_root) / f"{stamp}_seed{config.seed}"
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create run directory {run_dir}: {exc}") from exc
    return run_dir


def _subdir(run_dir, name):
    d = run_dir / name
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create {d}: {exc}") from exc
    return d


def write_manifest(run_dir, command, config: RunConfig, artifacts, inputs=()):
    rel = lambda p: str(Path(p).resolve().relative_to(run_dir.resolve())) if Path(p).resolve().is_relative_to(run_dir.resolve()) else str(p)
    manifest = {
        "command": command,
        "version": __version__,
        "seed": config.seed,
        "config": config.to_dict(),
        "inputs": {rel(p): sha256(p) for p in inputs},
        "artifacts": {rel(p): sha256(p) for p in sorted(map(str, artifacts))},
    }
    return _write_json(run_dir / f"manifest_{command.replace('-', '_')}.json", manifest)


def load_dataset(args, run_dir):
    """Dataset from explicit CSV paths or from the run directory's ``data/dataset.json``."""
    if getattr(args, "source", None):
        if not args.target:
            raise ConfigError("--target is required with --source")
        ds = load_csv(args.source, args.target, args.label_column)
        inputs = list(args.source) + [args.target]
        return ds, inputs, None
    index = run_dir / "data" / "dataset.json"
    if not index.exists():
        raise DataError(f"no dataset: pass --source/--target or run 'simulate' into {run_dir}")
    spec = json.loads(index.read_text())
    sources = [run_dir / p for p in spec["sources"]]
    target = run_dir / spec["target"]
    ds = load_csv(sources, target, spec["label_column"])
    truth = run_dir / spec["truth"] if spec.get("truth") else None
    return ds, sources + [target], truth


def _read_truth(path, label_map):
    if path is None or not Path(path).exists():
        raise DataError("no truth file: evaluation needs the target labels")
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    col = next(iter(rows[0])) if rows else None
    if col is None:
        raise DataError(f"{path}: empty truth file")
    lookup = {k: v for k, v in label_map.items()}
    try:
        return np.array([lookup[str(_norm_label(r[col]))] for r in rows], dtype=int)
    except KeyError as exc:
        raise DataError(f"{path}: label {exc} never seen in the source domains") from exc


def _norm_label(text):
    try:
        f = float(text)
        return int(f) if f.is_integer() else f
    except ValueError:
        return text


# ---------------------------------------------------------------- commands

def cmd_simulate(args, config, run_dir):
    spec = simulation_spec(config, config.seed)
    dataset, truth = simulate(spec)
    out = _subdir(run_dir, "data")
    names = dataset.feature_names
    files = []
    for k, (x, y) in enumerate(dataset.source_domains):
        p = out / f"source_{k}.csv"
        write_csv(p, x, names, y, "label")
        files.append(p)
    p_target = out / "target.csv"
    write_csv(p_target, dataset.target_features, names)
    p_truth = out / "truth.csv"
    _write_rows(p_truth, ["label"], [[int(v)] for v in truth])
    p_meta = out / "metadata.json"
    write_metadata(p_meta, dataset)
    p_graph = out / "true_graph.json"
    p_graph.write_text(spec.dag.to_json() + "\n")
    p_index = _write_json(out / "dataset.json", {
        "sources": [f"data/{f.name}" for f in files], "target": "data/target.csv",
        "truth": "data/truth.csv", "label_column": "label"})
    arts = files + [p_target, p_truth, p_meta, p_graph, p_index]
    write_manifest(run_dir, "simulate", config, arts)
    print(f"simulated {len(files)} source domains + target -> {out}")
    return arts


def cmd_learn_graph(args, config, run_dir):
    dataset, inputs, _ = load_dataset(args, run_dir)
    res = learn_augmented_dag(dataset.standardized(), config.graph_config())
    out = _subdir(run_dir, "graph")
    p_graph = out / "graph.json"
    p_graph.write_text(res.dag.to_json() + "\n")
    p_pdag = out / "pdag.json"
    p_pdag.write_text(res.pdag.to_json() + "\n")
    p_dot = out / "graph.dot"
    p_dot.write_text(res.pdag.to_dot())
    p_report = out / "report.txt"
    p_report.write_text(res.report())
    arts = [p_graph, p_pdag, p_dot, p_report]
    write_manifest(run_dir, "learn-graph", config, arts, inputs)
    sys.stdout.write(res.report())
    return arts


def _load_graph(args, run_dir):
    path = Path(args.graph) if getattr(args, "graph", None) else run_dir / "graph" / "graph.json"
    if not path.exists():
        raise DataError(f"graph file {path} not found; run 'learn-graph' first")
    return AugmentedDag.from_json(path.read_text()), path


def cmd_train(args, config, run_dir):
    dataset, inputs, _ = load_dataset(args, run_dir)
    dag, gpath = _load_graph(args, run_dir)
    data = dataset.standardized()
    tcfg = config.train_config()
    history = []
    bundle, posterior = train(data, dag, tcfg, history=history)
    out = _subdir(run_dir, "model")
    bin_path, json_path = save_bundle(out / "bundle", bundle)
    names = [f"source{k}" for k in range(dataset.n_sources)] + ["target"]
    p_post = _write_json(out / "posterior.json", posterior.to_dict(names))
    mmd_keys = sorted(history[0].mmd, key=str) if history else []
    header = ["epoch", "loss"] + ["mmd_" + "_".join(map(str, k)) for k in mmd_keys] + \
             [f"kl_{n}" for n in names]
    rows = [[h.epoch, _fmt(h.loss)] + [_fmt(h.mmd[k]) for k in mmd_keys] + [_fmt(v) for v in h.kl]
            for h in history]
    p_log = _write_rows(out / "training_log.csv", header, rows)
    arts = [bin_path, json_path, p_post, p_log]
    if config.run.figures and history:
        from augda.plotting import plot_training_curve
        arts.append(plot_training_curve([h.epoch for h in history], [h.loss for h in history],
                                        out / "training_curve.png"))
    write_manifest(run_dir, "train", config, arts, inputs + [gpath])
    print(f"trained {len(bundle.modules)} modules, {bundle.n_theta} theta groups -> {out}")
    return arts


def _load_model(run_dir):
    out = run_dir / "model"
    if not (out / "bundle.bin").exists() or not (out / "posterior.json").exists():
        raise DataError(f"no trained model in {out}; run 'train' first")
    bundle, _ = load_bundle(out / "bundle")
    posterior = ThetaPosterior.from_dict(json.loads((out / "posterior.json").read_text()))
    return bundle, posterior, [out / "bundle.bin", out / "bundle.json", out / "posterior.json"]


def cmd_predict(args, config, run_dir):
    dataset, inputs, _ = load_dataset(args, run_dir)
    bundle, posterior, model_files = _load_model(run_dir)
    data = dataset.standardized()
    probs = predict_target(bundle, posterior, data.target_features, config.train_config())
    inverse = {v: k for k, v in dataset.metadata.get("label_map", {}).items()}
    out = _subdir(run_dir, "predictions")
    header = [f"p_{inverse.get(k, k)}" for k in range(dataset.n_classes)] + ["label"]
    rows = [[_fmt(v) for v in row] + [inverse.get(int(np.argmax(row)), int(np.argmax(row)))]
            for row in probs]
    p_pred = _write_rows(out / "target_predictions.csv", header, rows)
    write_manifest(run_dir, "predict", config, [p_pred], inputs + model_files)
    print(f"wrote {len(rows)} predictions -> {p_pred}")
    return [p_pred]


def cmd_evaluate(args, config, run_dir):
    out = _subdir(run_dir, "evaluate")
    if args.mode == "run":
        dataset, inputs, truth_path = load_dataset(args, run_dir)
        if args.truth:
            truth_path = Path(args.truth)
        truth = _read_truth(truth_path, dataset.metadata.get("label_map", {}))
        pred_path = run_dir / "predictions" / "target_predictions.csv"
        if not pred_path.exists():
            raise DataError(f"{pred_path} not found; run 'predict' first")
        with open(pred_path, encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        probs = np.array([[float(v) for v in r[:-1]] for r in rows])
        if len(probs) != len(truth):
            raise DataError("predictions and truth differ in length")
        pool = pooled_baseline(dataset.standardized(), config.train_config())
        infer_acc = float(np.mean(probs.argmax(axis=1) == truth) * 100)
        pool_acc = float(np.mean(pool.argmax(axis=1) == truth) * 100)
        summary = {"infer": {"mean": infer_acc, "std": 0.0}, "pool": {"mean": pool_acc, "std": 0.0},
                   "n_replicates": 1}
        rows_out = [{"replicate": 0, "seed": config.seed, "infer": infer_acc, "pool": pool_acc,
                     "changing": ""}]
        inputs = inputs + [pred_path, truth_path]
    else:
        summary, rows_out = evaluate_replicates(config)
        inputs = []
    p_metrics = _write_json(out / "metrics.json", summary)
    p_rows = _write_rows(out / "replicates.csv", ["replicate", "seed", "infer", "pool", "changing"],
                         [[r["replicate"], r["seed"], _fmt(r["infer"]), _fmt(r["pool"]), r["changing"]]
                          for r in rows_out])
    arts = [p_metrics, p_rows]
    if config.run.figures:
        from augda.plotting import plot_accuracy
        arts.append(plot_accuracy({"Infer": summary["infer"], "pool": summary["pool"]},
                                  out / "accuracy.png"))
    write_manifest(run_dir, "evaluate", config, arts, inputs)
    print(f"infer {summary['infer']['mean']:.2f} ({summary['infer']['std']:.2f})  "
          f"pool {summary['pool']['mean']:.2f} ({summary['pool']['std']:.2f})  "
          f"over {summary['n_replicates']} replicate(s)")
    return arts


def cmd_demo_posterior(args, config, run_dir):
    values = args.v
    if any(v <= 0 for v in values):
        raise DataError("variance values must be positive")
    out = _subdir(run_dir, "posterior")
    arts, curves, summary = [], {}, []
    for v in values:
        dens = gamma_posterior_demo(v, n_grid=args.n_grid)
        p = _write_rows(out / f"density_v{v:g}.csv", ["theta_y", "density"],
                        [[_fmt(a), _fmt(b)] for a, b in zip(dens.grid, dens.density)])
        arts.append(p)
        curves[f"Var(X) = {v:g}"] = (dens.grid, dens.density)
        summary.append([f"{v:g}", _fmt(dens.integral()), _fmt(dens.mean()), _fmt(dens.std()),
                        _fmt(dens.mode())])
    prior = gamma_posterior_demo(None, n_grid=args.n_grid)
    arts.append(_write_rows(out / "prior.csv", ["theta_y", "density"],
                            [[_fmt(a), _fmt(b)] for a, b in zip(prior.grid, prior.density)]))
    arts.append(_write_rows(out / "summary.csv", ["v", "integral", "mean", "std", "mode"], summary))
    if config.run.figures:
        from augda.plotting import plot_densities
        arts.append(plot_densities(curves, out / "posterior.png"))
    write_manifest(run_dir, "demo-posterior", config, arts)
    for row in summary:
        print(f"v={row[0]}: mean {float(row[2]):.4f} std {float(row[3]):.4f} mode {float(row[4]):.4f}")
    return arts


COMMANDS = {
    "simulate": cmd_simulate,
    "learn-graph": cmd_learn_graph,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "demo-posterior": cmd_demo_posterior,
}


# ------------------------------------------------------------------ parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--run-dir", help="run directory (created if missing)")
    common.add_argument("--runs-root", default="runs",
                        help="parent of auto-named run directories (default: runs)")
    common.add_argument("--figures", action="store_true", default=None,
                        help="also render PNG figures next to the CSV outputs")
    common.add_argument("-v", "--verbose", action="count", default=0)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--source", nargs="+", help="source-domain CSV files")
    data.add_argument("--target", help="target-domain CSV file")
    data.add_argument("--label-column", default="label")

    p = argparse.ArgumentParser(prog="augda", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"augda {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate multi-domain data")
    s.add_argument("--n-domains", type=int, help="number of source domains")
    s.add_argument("--n-per-domain", type=int)
    s.add_argument("--theta-scale", type=float)
    s.add_argument("--label-link", choices=["threshold", "softmax"])

    g = sub.add_parser("learn-graph", parents=[common, data], help="learn the augmented DAG")
    g.add_argument("--alpha", type=float)
    g.add_argument("--max-samples", type=int)

    t = sub.add_parser("train", parents=[common, data], help="fit generators and posteriors")
    t.add_argument("--graph", help="graph JSON (default: <run-dir>/graph/graph.json)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)

    r = sub.add_parser("predict", parents=[common, data], help="predict target labels")
    r.add_argument("--prediction-samples", type=int)

    e = sub.add_parser("evaluate", parents=[common, data],
                       help="accuracy of the pipeline and the pooled baseline")
    e.add_argument("--mode", choices=["replicates", "run"], default="replicates",
                   help="simulate fresh replicates, or score this run's predictions")
    e.add_argument("--replicates", type=int)
    e.add_argument("--graph", dest="graph_mode", choices=["learned", "true"])
    e.add_argument("--jobs", type=int)
    e.add_argument("--truth", help="truth CSV for --mode run")
    e.add_argument("--n-domains", type=int)
    e.add_argument("--n-per-domain", type=int)
    e.add_argument("--theta-scale", type=float)
    e.add_argument("--epochs", type=int)
    e.add_argument("--prediction-samples", type=int)

    d = sub.add_parser("demo-posterior", parents=[common],
                       help="posterior of theta_Y given Var(X) (gamma example)")
    d.add_argument("--v", type=float, nargs="+", default=[1.0, 4.0, 8.0])
    d.add_argument("--n-grid", type=int, default=20001)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {OVERRIDES[k]: v for k, v in vars(args).items() if k in OVERRIDES and v is not None}
        config = load_config(args.config, overrides)
        run_dir = resolve_run_dir(args, config)
        COMMANDS[args.command](args, config, run_dir)
    except AugdaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

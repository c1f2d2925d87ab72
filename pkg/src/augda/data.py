"""Multi-domain datasets: validation, CSV ingestion and simulation from a known graph."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from augda.dag import AugmentedDag
from augda.errors import ConfigError, CycleError, DataError
from augda.neural import Mlp, forward

log = logging.getLogger(__name__)


@dataclass
class MultiDomainDataset:
    """Labelled source domains plus unlabelled target features.

    The domain index takes values ``0..n_sources-1`` on the source rows and
    ``n_sources`` on the target rows.
    """

    source_domains: list  # list of (features [m_i, d], labels [m_i])
    target_features: np.ndarray
    feature_names: list
    n_classes: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.source_domains = [(np.asarray(x, dtype=float), np.asarray(y, dtype=int))
                               for x, y in self.source_domains]
        self.target_features = np.asarray(self.target_features, dtype=float)
        self.validate()

    def validate(self):
        d = len(self.feature_names)
        if not self.source_domains:
            raise DataError("at least one source domain is required")
        if self.n_classes < 1:
            raise DataError("n_classes must be positive")
        for i, (x, y) in enumerate(self.source_domains):
            if x.ndim != 2 or x.shape[0] < 1:
                raise DataError(f"source domain {i} is empty")
            if x.shape[1] != d:
                raise DataError(f"source domain {i} has {x.shape[1]} features, expected {d}")
            if y.shape != (x.shape[0],):
                raise DataError(f"source domain {i}: label vector has wrong length")
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise DataError(f"source domain {i}: labels outside [0, {self.n_classes})")
        if self.target_features.ndim != 2 or self.target_features.shape[1] != d:
            raise DataError("target features do not match the feature count")

    @property
    def n_sources(self):
        return len(self.source_domains)

    @property
    def n_features(self):
        return len(self.feature_names)

    @property
    def domain_sizes(self):
        return [x.shape[0] for x, _ in self.source_domains] + [self.target_features.shape[0]]

    @property
    def domain_index_values(self):
        return np.concatenate([np.full(m, i) for i, m in enumerate(self.domain_sizes)])

    def pooled_source(self):
        """Stacked source features, labels and domain index."""
        x = np.vstack([x for x, _ in self.source_domains])
        y = np.concatenate([y for _, y in self.source_domains])
        c = np.concatenate([np.full(len(y_), i) for i, (_, y_) in enumerate(self.source_domains)])
        return x, y, c

    def standardized(self):
        """Copy with every feature z-scored using pooled source statistics."""
        x, _, _ = self.pooled_source()
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std[std == 0] = 1.0
        meta = dict(self.metadata)
        meta["standardization"] = {"mean": mean.tolist(), "std": std.tolist()}
        return MultiDomainDataset([((xi - mean) / std, yi) for xi, yi in self.source_domains],
                                  (self.target_features - mean) / std, list(self.feature_names),
                                  self.n_classes, meta)

    def metadata_record(self):
        rec = {
            "feature_names": list(self.feature_names),
            "n_classes": self.n_classes,
            "source_sizes": self.domain_sizes[:-1],
            "target_size": self.domain_sizes[-1],
        }
        rec.update(self.metadata)
        return rec


# --------------------------------------------------------------------- CSV


def _read_numeric(path, columns=None):
    path = Path(path)
    try:
        frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"{path}: empty file") from exc
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: cannot read ({exc})") from exc
    if frame.shape[0] == 0:
        raise DataError(f"{path}: no data rows")
    return frame


def load_csv(paths, target_path, label_column, feature_columns=None):
    """Read one CSV per source domain plus a target CSV.

    Labels are remapped to dense integers ``0..K-1`` in sorted order of the
    original values; the mapping is kept in ``metadata["label_map"]``.  Rows
    whose feature values are not numeric are dropped and reported in
    ``metadata["warnings"]``.
    """
    warnings = []
    frames = [_read_numeric(p) for p in paths]
    if not frames:
        raise DataError("no source files given")
    for p, f in zip(paths, frames):
        if label_column not in f.columns:
            raise DataError(f"{p}: unknown label column {label_column!r}")
    if feature_columns is None:
        feature_columns = [c for c in frames[0].columns if c != label_column]
    for p, f in zip(paths, frames):
        if [c for c in f.columns if c != label_column] != list(feature_columns):
            raise DataError(f"{p}: columns {list(f.columns)} do not match {feature_columns}")
    target = _read_numeric(target_path)
    if label_column in target.columns:
        msg = f"{target_path}: label column {label_column!r} present in target file, dropped"
        log.warning(msg)
        warnings.append(msg)
        target = target.drop(columns=[label_column])
    if list(target.columns) != list(feature_columns):
        raise DataError(f"{target_path}: columns {list(target.columns)} do not match {feature_columns}")

    def numeric_rows(frame, path):
        feats = frame[list(feature_columns)].apply(pd.to_numeric, errors="coerce")
        bad = ~np.isfinite(feats.to_numpy(dtype=float)).all(axis=1)
        if bad.any():
            msg = f"{path}: dropped {int(bad.sum())} row(s) with non-numeric features"
            log.warning(msg)
            warnings.append(msg)
        keep = ~bad
        if keep.sum() == 0:
            raise DataError(f"{path}: no numeric rows")
        return feats.to_numpy(dtype=float)[keep], keep

    raw_labels = []
    domains = []
    for p, f in zip(paths, frames):
        x, keep = numeric_rows(f, p)
        raw_labels.append(f[label_column].to_numpy()[keep])
        domains.append(x)
    values = sorted(set(np.concatenate(raw_labels).tolist()))
    label_map = {str(v): k for k, v in enumerate(values)}
    lookup = {v: k for k, v in enumerate(values)}
    sources = [(x, np.array([lookup[v] for v in lab], dtype=int)) for x, lab in zip(domains, raw_labels)]
    xt, _ = numeric_rows(target, target_path)
    meta = {"label_map": label_map, "warnings": warnings,
            "source_files": [str(p) for p in paths], "target_file": str(target_path)}
    return MultiDomainDataset(sources, xt, list(feature_columns), len(values), meta)


def write_csv(path, features, feature_names, labels=None, label_column="label"):
    frame = pd.DataFrame(np.asarray(features), columns=list(feature_names))
    if labels is not None:
        frame[label_column] = np.asarray(labels, dtype=int)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def write_metadata(path, dataset: MultiDomainDataset, extra=None):
    rec = dataset.metadata_record()
    if extra:
        rec.update(extra)
    Path(path).write_text(json.dumps(rec, indent=2, sort_keys=True, default=str) + "\n")


# -------------------------------------------------------------- simulation


@dataclass
class SimulationSpec:
    dag: AugmentedDag
    n_domains: int = 2  # number of source domains; one target domain is added
    n_per_domain: int = 500
    module_widths: int | dict = 32
    theta_scale: float = 1.0
    seed: int = 0
    label_link: str = "threshold"  # or "softmax" (sample the label from the softmax)
    max_attempts: int = 20
    balance_limit: float = 0.95

    def __post_init__(self):
        if self.n_domains < 1:
            raise ConfigError("need at least one source domain")
        if self.n_per_domain < 1:
            raise ConfigError("n_per_domain must be >= 1")
        if self.theta_scale < 0:
            raise ConfigError("theta_scale must be >= 0")
        if self.label_link not in ("threshold", "softmax"):
            raise ConfigError(f"unknown label link {self.label_link!r}")

    def width(self, node_name):
        if isinstance(self.module_widths, dict):
            return int(self.module_widths.get(node_name, 32))
        return int(self.module_widths)


@dataclass
class SimulationModel:
    """Sampled ground-truth mechanisms: one random MLP per node plus per-domain thetas."""

    dag: AugmentedDag
    mlps: dict  # node index -> Mlp
    thetas: np.ndarray  # [n_domains_total, n_theta_groups]
    n_classes: int
    label_link: str

    def node_input(self, i, values, noise_col, theta_row):
        parts = []
        for p in self.dag.parents(i):
            parts.append(values[p])
        parts.append(noise_col[:, None])
        g = self.dag.theta_group_of(i)
        if g is not None:
            parts.append(np.full((noise_col.shape[0], 1), theta_row[g]))
        return np.hstack(parts)

    def generate(self, theta_row, noise, label_noise=None):
        """Generate one domain given its theta vector and per-node noise columns.

        ``noise`` maps node index -> standard-normal column of length n.
        Returns ``(features [n, d], labels [n])``.
        """
        dag = self.dag
        n = next(iter(noise.values())).shape[0]
        d = len(dag.feature_names)
        values = {}
        x = np.zeros((n, d))
        labels = None
        for i in dag.topological_order():
            out, _ = forward(self.mlps[i], self.node_input(i, values, noise[i], theta_row))
            node = dag.nodes[i]
            if node.is_label:
                if self.label_link == "threshold":
                    labels = np.argmax(out, axis=1)
                else:
                    p = np.exp(out - out.max(axis=1, keepdims=True))
                    p /= p.sum(axis=1, keepdims=True)
                    labels = (label_noise[:, None] > np.cumsum(p, axis=1)).sum(axis=1)
                    labels = np.minimum(labels, self.n_classes - 1)
                onehot = np.zeros((n, self.n_classes))
                onehot[np.arange(n), labels] = 1.0
                values[i] = onehot
            else:
                values[i] = out
                x[:, list(node.features)] = out
        return x, labels


def draw_model(spec: SimulationSpec, rng) -> SimulationModel:
    dag = spec.dag
    if dag.undirected:
        raise ConfigError("simulation needs a fully directed graph")
    if not dag.is_acyclic():
        raise CycleError("simulation graph is cyclic")
    n_classes = dag.n_classes
    mlps = {}
    for i in dag.topological_order():
        node = dag.nodes[i]
        n_in = sum(n_classes if dag.nodes[p].is_label else dag.nodes[p].width for p in dag.parents(i))
        n_in += 1 + (dag.theta_group_of(i) is not None)
        n_out = n_classes if node.is_label else node.width
        mlps[i] = Mlp.init([n_in, spec.width(node.name), n_out], rng, "tanh", scale="unit")
    thetas = rng.normal(0.0, 1.0, size=(spec.n_domains + 1, len(dag.theta_groups))) * spec.theta_scale
    return SimulationModel(dag, mlps, thetas, n_classes, spec.label_link)


def _draw_noise(model, n, rng):
    noise = {i: rng.normal(size=n) for i in model.dag.topological_order()}
    return noise, rng.random(n)


def simulate(spec: SimulationSpec):
    """Simulate source domains and a target domain from ``spec.dag``.

    Returns ``(dataset, target_labels)``.  The graph's MLPs and thetas are
    redrawn (up to ``max_attempts`` times) while any domain has a class with
    frequency above ``balance_limit``.
    """
    dag = spec.dag
    if dag.undirected or not dag.is_acyclic():
        raise CycleError("simulation graph must be a DAG")
    try:
        dag.label_index
    except Exception as exc:
        raise ConfigError("simulation graph needs a label node") from exc
    if not dag.feature_names:
        raise ConfigError("simulation graph needs feature names")
    for attempt in range(spec.max_attempts):
        rng = np.random.Generator(np.random.Philox(key=[spec.seed, attempt]))
        model = draw_model(spec, rng)
        domains = []
        for k in range(spec.n_domains + 1):
            noise, unif = _draw_noise(model, spec.n_per_domain, rng)
            domains.append(model.generate(model.thetas[k], noise, unif))
        worst = max(np.bincount(y, minlength=dag.n_classes).max() / len(y) for _, y in domains)
        if worst <= spec.balance_limit:
            break
        log.debug("simulation attempt %d degenerate (max class freq %.3f)", attempt, worst)
    else:
        log.warning("no balanced simulation after %d attempts; keeping the last draw", spec.max_attempts)
    meta = {"seed": spec.seed, "attempt": attempt, "theta_scale": spec.theta_scale,
            "thetas": model.thetas.tolist(), "label_link": spec.label_link}
    dataset = MultiDomainDataset(domains[:-1], domains[-1][0], list(dag.feature_names),
                                 dag.n_classes, meta)
    return dataset, domains[-1][1]

"""End-to-end workflow shared by the command line and the acceptance tests."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from augda.dag import benchmark_dag
from augda.data import MultiDomainDataset, SimulationSpec, simulate
from augda.graph import GraphLearnResult, instantiate_dag, learn_augmented_dag
from augda.inference import pooled_baseline, predict_target, train

log = logging.getLogger(__name__)


def replicate_seed(master, r):
    """Seed of replicate ``r``, derived deterministically from the master seed."""
    return int(np.random.SeedSequence([int(master), int(r)]).generate_state(1)[0])


@dataclass
class PipelineResult:
    probabilities: np.ndarray
    pool_probabilities: np.ndarray
    graph: object  # GraphLearnResult or the supplied DAG
    bundle: object
    posterior: object
    history: list
    seconds: float


def run_pipeline(dataset: MultiDomainDataset, config, seed, dag=None) -> PipelineResult:
    """Standardise, learn (or use) the graph, train, predict and fit the pooled baseline.

    ``config`` is a :class:`augda.config.RunConfig`.
    """
    t0 = time.perf_counter()
    data = dataset.standardized()
    if dag is None:
        graph = learn_augmented_dag(data, config.graph_config(seed))
        dag = graph.dag
    else:
        graph = dag
    tcfg = config.train_config(seed)
    history = []
    bundle, posterior = train(data, dag, tcfg, history=history)
    probs = predict_target(bundle, posterior, data.target_features, tcfg)
    pool = pooled_baseline(data, tcfg)
    return PipelineResult(probs, pool, graph, bundle, posterior, history, time.perf_counter() - t0)


def simulation_spec(config, seed, dag=None):
    s = config.simulation
    return SimulationSpec(dag or benchmark_dag(), n_domains=s.n_domains, n_per_domain=s.n_per_domain,
                          module_widths=s.module_width, theta_scale=s.theta_scale, seed=seed,
                          label_link=s.label_link)


def _one_replicate(args):
    config, r = args
    seed = replicate_seed(config.seed, r)
    dataset, truth = simulate(simulation_spec(config, seed))
    dag = instantiate_dag(benchmark_dag(), restrict_to_blanket=True) if config.evaluate.graph == "true" else None
    res = run_pipeline(dataset, config, seed, dag)
    acc = float(np.mean(res.probabilities.argmax(axis=1) == truth) * 100)
    pool = float(np.mean(res.pool_probabilities.argmax(axis=1) == truth) * 100)
    g = res.graph.dag if isinstance(res.graph, GraphLearnResult) else res.graph
    changing = [g.nodes[i].name for i, c in enumerate(g.changing) if c]
    if isinstance(res.graph, GraphLearnResult):
        changing = [nd.name for nd, c in zip(res.graph.pdag.nodes, res.graph.pdag.changing) if c]
    log.info("replicate %d (seed %d): infer %.2f pool %.2f in %.1fs", r, seed, acc, pool, res.seconds)
    return {"replicate": r, "seed": seed, "infer": acc, "pool": pool,
            "changing": " ".join(changing), "seconds": res.seconds}


def evaluate_replicates(config, replicates=None, jobs=None):
    """Simulate-learn-train-predict ``replicates`` times; accuracy summary in percent."""
    n = config.evaluate.replicates if replicates is None else replicates
    jobs = config.run.jobs if jobs is None else jobs
    tasks = [(config, r) for r in range(n)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_one_replicate, tasks))
    else:
        rows = [_one_replicate(t) for t in tasks]
    return summarize(rows), rows


def summarize(rows):
    out = {}
    for key in ("infer", "pool"):
        vals = np.array([r[key] for r in rows], dtype=float)
        out[key] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
    out["n_replicates"] = len(rows)
    return out

import numpy as np
import pytest
from scipy import stats

from augda.dag import LABEL, AugmentedDag, Node, benchmark_dag
from augda.errors import ConfigError, DataError, GraphError
from augda.generative import (
    GeneratorConfig,
    backward_bundle,
    build_bundle,
    draw_noise,
    label_probabilities,
    load_bundle,
    run_bundle,
    sample_domain,
    save_bundle,
)
from oracles import central_diff, rel_err


def names(bundle, idx):
    return {bundle.dag.nodes[i].name for i in idx}


def y_only(noise_dim=1, seed=0):
    dag = AugmentedDag([Node("X1", (0,)), Node(LABEL)], changing=[False, True], feature_names=["X1"])
    return build_bundle(dag, GeneratorConfig(noise_dim=noise_dim, seed=seed))


def cond_rows(n, seed=0, d=7):
    return np.random.default_rng(seed).standard_normal((n, d))


def test_benchmark_bundle_layout():
    b = build_bundle(benchmark_dag())
    assert names(b, b.nodes) == {"Y", "X2", "X3", "X5"}
    with_theta = {b.dag.nodes[m.node].name for m in b.modules if m.theta_dim}
    assert with_theta == {"Y", "X2", "X3"}
    assert names(b, b.conditioning) == {"X1", "X4"}
    assert b.n_theta == 3
    assert b.blanket_columns() == [0, 1, 2, 3, 4]
    # topological order: Y before its children, X2 before X3
    order = [b.dag.nodes[i].name for i in b.nodes]
    assert order.index("Y") == 0 and order.index("X2") < order.index("X3")


def test_childless_label_gives_single_module():
    b = y_only()
    assert names(b, b.nodes) == {"Y"} and b.n_theta == 1


def test_merged_supernode_module():
    nodes = [Node(LABEL), Node("X1+X2", (0, 1))]
    dag = AugmentedDag(nodes, {(0, 1)}, changing=[False, True], feature_names=["X1", "X2"])
    b = build_bundle(dag)
    m = b.module_for(1)
    assert m.out_width == 2 and m.theta_dim == 1
    x, y = sample_domain(b, [0.3], n=5)
    assert x.shape == (5, 2) and np.isfinite(x).all()


def test_build_errors():
    with pytest.raises(GraphError):
        build_bundle(AugmentedDag([Node("A", (0,)), Node(LABEL)], set(), {(0, 1)}))
    with pytest.raises(GraphError):
        build_bundle(AugmentedDag([Node("A", (0,))]))
    with pytest.raises(ConfigError):
        GeneratorConfig(theta_dim=2)


def test_label_frequencies_match_softmax():
    b = y_only(noise_dim=0)
    theta = np.array([0.7])
    p = label_probabilities(b, theta)[0]
    _, y = sample_domain(b, theta, n=100_000, seed=3)
    freq = np.bincount(y, minlength=2) / len(y)
    assert np.abs(freq - p).max() < 0.01


def test_same_seed_same_samples():
    b = build_bundle(benchmark_dag())
    c = cond_rows(50)
    x1, y1 = sample_domain(b, [0.1, -0.2, 0.5], c, seed=9)
    x2, y2 = sample_domain(b, [0.1, -0.2, 0.5], c, seed=9)
    assert np.array_equal(x1, x2, equal_nan=True) and np.array_equal(y1, y2)
    # columns outside the blanket stay empty
    assert np.isnan(x1[:, [5, 6]]).all() and np.isfinite(x1[:, :5]).all()


def test_theta_changes_label_marginal():
    b = y_only(noise_dim=0)
    m = b.module_for(b.label)
    w = m.mlp.weights[0].copy()
    w[-1] = 3.0  # make the theta pathway strong
    ps = list(m.mlp.params)
    ps[0] = w
    m.mlp.set_params(ps)
    _, ya = sample_domain(b, [-1.0], n=10_000, seed=1)
    _, yb = sample_domain(b, [1.0], n=10_000, seed=2)
    table = [np.bincount(ya, minlength=2), np.bincount(yb, minlength=2)]
    assert stats.chi2_contingency(table).pvalue < 1e-3


def test_theta_only_moves_its_module_and_descendants():
    b = build_bundle(benchmark_dag())
    c = cond_rows(200, seed=1)
    base = np.array([0.2, 0.4, -0.3])
    x0, y0 = sample_domain(b, base, c, seed=5)
    names_by_k = [[b.dag.nodes[i].name for i in g] for g in b.theta_groups]
    k = names_by_k.index(["X2"])
    t = base.copy()
    t[k] += 2.0
    x1, y1 = sample_domain(b, t, c, seed=5)
    assert np.array_equal(y0, y1)
    assert np.array_equal(x0[:, [0, 3, 4]], x1[:, [0, 3, 4]])  # X1, X4 conditioned, X5 child of Y only
    assert not np.array_equal(x0[:, 1], x1[:, 1])


def test_sampling_errors():
    b = build_bundle(benchmark_dag())
    with pytest.raises(DataError):
        sample_domain(b, [0.0], cond_rows(5))
    with pytest.raises(DataError):
        sample_domain(b, [0.0, 0.0, 0.0], None, n=5)
    with pytest.raises(DataError):
        sample_domain(b, [0.0, 0.0, 0.0], cond_rows(5, d=1))


def test_bundle_gradients_match_finite_differences():
    b = build_bundle(benchmark_dag(), GeneratorConfig(hidden=6, seed=2))
    n = 7
    c = cond_rows(n, seed=3)
    draws = draw_noise(b, n, np.random.default_rng(4))
    theta = np.array([0.3, -0.5, 0.8])
    r = np.random.default_rng(5)
    weights = {m.node: r.standard_normal((n, m.out_width)) for m in b.modules}

    def loss(params, th):
        bb = b.copy()
        bb.set_params(params)
        values, _ = run_bundle(bb, th, c, draws, relaxed=True)
        return float(sum(np.sum(values[k] * w) for k, w in weights.items()))

    values, passes = run_bundle(b, theta, c, draws, relaxed=True)
    grads, gtheta = backward_bundle(b, passes, weights)
    params = b.params
    for k, p in enumerate(params):
        def f(v, k=k):
            ps = [q.copy() for q in params]
            ps[k] = v
            return loss(ps, theta)
        assert rel_err(grads[k], central_diff(f, p)) < 1e-4
    assert rel_err(gtheta, central_diff(lambda t: loss(params, t), theta)) < 1e-4


def test_checkpoint_round_trip(tmp_path):
    b = build_bundle(benchmark_dag(), GeneratorConfig(seed=4))
    b.bandwidths = {7: 1.5, 1: 0.8, "target": 2.0}
    save_bundle(tmp_path / "bundle", b, {"note": 1})
    b2, info = load_bundle(tmp_path / "bundle")
    c = cond_rows(30)
    assert np.array_equal(sample_domain(b, [0.1, 0.2, 0.3], c)[0],
                          sample_domain(b2, [0.1, 0.2, 0.3], c)[0], equal_nan=True)
    assert b2.bandwidths == b.bandwidths and info["note"] == 1

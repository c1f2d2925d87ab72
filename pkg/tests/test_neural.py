import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from augda.errors import DataError, NonFiniteGradientError, StaleCacheError
from augda.neural import (
    AdamState,
    Mlp,
    adam_step,
    backward,
    forward,
    load_checkpoint,
    mlp_arrays,
    mlp_from_arrays,
    save_checkpoint,
)
from oracles import central_diff, rel_err


def net(sizes=(3, 5, 2), seed=0, act="tanh"):
    return Mlp.init(list(sizes), np.random.default_rng(seed), act, scale="unit")


def test_forward_matches_manual():
    m = net()
    x = np.random.default_rng(1).standard_normal((4, 3))
    h = np.tanh(x @ m.weights[0] + m.biases[0])
    assert np.allclose(m(x), h @ m.weights[1] + m.biases[1])


@pytest.mark.parametrize("act", ["tanh", "relu"])
def test_parameter_and_input_gradients_match_finite_differences(act):
    m = net((3, 6, 2), seed=2, act=act)
    r = np.random.default_rng(3)
    x = r.standard_normal((5, 3))
    c = r.standard_normal((5, 2))

    def loss_params(params):
        mm = m.copy()
        mm.set_params(params)
        return float(np.sum(mm(x) * c))

    out, cache = forward(m, x)
    grads, gin = backward(m, cache, c)
    for k, p in enumerate(m.params):
        def f(v, k=k):
            ps = [q.copy() for q in m.params]
            ps[k] = v
            return loss_params(ps)
        assert rel_err(grads[k], central_diff(f, p)) < 1e-3
    assert rel_err(gin, central_diff(lambda v: float(np.sum(m(v) * c)), x)) < 1e-3


def test_stale_cache_detected():
    m = net()
    x = np.ones((2, 3))
    _, cache = forward(m, x)
    m.set_params(m.params)
    with pytest.raises(StaleCacheError):
        backward(m, cache, np.ones((2, 2)))
    with pytest.raises(StaleCacheError):
        backward(net(), cache, np.ones((2, 2)))


def test_forward_rejects_bad_input():
    m = net()
    with pytest.raises(DataError):
        forward(m, np.ones((2, 4)))
    with pytest.raises(DataError):
        forward(m, np.array([[1.0, np.nan, 0.0]]))


def test_adam_first_step_moves_by_learning_rate():
    p = [np.array([1.0, -2.0])]
    g = [np.array([0.5, -3.0])]
    st_ = AdamState.for_params(p, learning_rate=0.1)
    new, st2 = adam_step(st_, p, g)
    # with bias correction the first step is lr * sign(g) up to eps
    assert np.allclose(new[0], p[0] - 0.1 * np.sign(g[0]), atol=1e-7)
    assert st2.step == 1 and st_.step == 0
    assert np.array_equal(p[0], [1.0, -2.0])


def test_adam_matches_reference_recursion():
    r = np.random.default_rng(4)
    p = [r.standard_normal(3)]
    st_ = AdamState.for_params(p, learning_rate=0.01)
    m = v = np.zeros(3)
    ref = p[0].copy()
    for t in range(1, 6):
        g = r.standard_normal(3)
        p, st_ = adam_step(st_, p, [g])
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert np.allclose(p[0], ref, rtol=0, atol=1e-14)


def test_adam_refuses_non_finite():
    p = [np.zeros(2)]
    with pytest.raises(NonFiniteGradientError):
        adam_step(AdamState.for_params(p), p, [np.array([np.inf, 0.0])])


def test_adam_minimises_quadratic():
    p = [np.array([5.0, -4.0])]
    st_ = AdamState.for_params(p, learning_rate=0.1)
    for _ in range(500):
        p, st_ = adam_step(st_, p, [2 * p[0]])
    assert np.abs(p[0]).max() < 1e-2


def test_checkpoint_round_trip(tmp_path):
    m = net((4, 7, 3), seed=5)
    save_checkpoint(tmp_path / "ck", mlp_arrays(m), {"note": "x"})
    arrays, extra = load_checkpoint(tmp_path / "ck")
    m2 = mlp_from_arrays(arrays, m.layer_sizes, m.activation)
    x = np.random.default_rng(6).standard_normal((3, 4))
    assert np.array_equal(m(x), m2(x)) and extra == {"note": "x"}
    raw = (tmp_path / "ck.bin").read_bytes()
    assert len(raw) == 8 * sum(p.size for p in m.params)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=2, max_size=4), st.integers(0, 1000))
def test_output_shape_and_determinism(sizes, seed):
    a = Mlp.init(sizes, np.random.default_rng(seed))
    b = Mlp.init(sizes, np.random.default_rng(seed))
    x = np.random.default_rng(seed + 1).standard_normal((3, sizes[0]))
    assert a(x).shape == (3, sizes[-1])
    assert np.array_equal(a(x), b(x))

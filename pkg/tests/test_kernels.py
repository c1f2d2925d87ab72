import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from augda.errors import DataError, InsufficientDataError
from augda.kernels import (
    KernelConfig,
    kci_test,
    kernel_factor,
    label_codes,
    median_heuristic,
    mmd2_joint,
    mmd2_marginal,
    mmd_permutation_test,
    rbf_kernel,
)
from oracles import brute_median, central_diff, loop_mmd2, one_hot, rel_err


def rng(seed):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------- median

def test_median_identical_points_falls_back_to_one():
    assert median_heuristic(np.zeros((2, 3))) == 1.0


def test_median_two_points():
    assert median_heuristic(np.array([[0.0], [2.0]])) == 2.0


def test_median_matches_brute_force_all_pairs():
    x = np.random.default_rng(3).standard_normal((100, 2))
    assert median_heuristic(x) == brute_median(x)


def test_median_subsamples_large_inputs():
    x = rng(0).standard_normal((3000, 2))
    h = median_heuristic(x, max_rows=1000)
    assert 1.3 < h < 2.0  # median distance of 2-D standard normals is about 1.67


def test_median_needs_two_rows():
    with pytest.raises(DataError):
        median_heuristic(np.zeros((1, 2)))


# ------------------------------------------------------------------- MMD

def test_mmd_two_point_toy_matches_hand_sum():
    xr = np.array([[0.0, 0.0], [1.0, 1.0]])
    xf = np.array([[0.0, 1.0], [1.0, 0.0]])
    yr, yf = np.array([0, 1]), np.array([0, 1])
    # hand-unrolled: rr = 2 (diag, same label) + 0 (different labels)
    # rf pairs with equal labels: (r0, f0) d2=1, (r1, f1) d2=1
    # ff = 2 (diag)
    e = math.exp(-0.5)
    expected = 2 / 4 - 2 * (e + e) / 4 + 2 / 4
    got = mmd2_joint((xr, yr), (xf, yf), bandwidth=1.0, n_classes=2)
    assert abs(got - expected) < 1e-12
    assert abs(got - loop_mmd2(xr, xf, 1.0, one_hot(yr, 2), one_hot(yf, 2))) < 1e-12


def test_mmd_marginal_single_pair_closed_form():
    got = mmd2_marginal(np.array([[0.0]]), np.array([[1.0]]), bandwidth=1.0)
    assert abs(got - (2 - 2 * math.exp(-0.5))) < 1e-15


def test_mmd_identical_samples_zero():
    x = rng(1).standard_normal((20, 3))
    y = rng(2).integers(0, 2, 20)
    assert abs(mmd2_joint((x, y), (x, y), bandwidth=1.3)) <= 1e-12
    assert abs(mmd2_marginal(x, x, bandwidth=0.7)) <= 1e-12


def test_mmd_symmetric_in_real_and_fake():
    r = rng(4)
    a, b = r.standard_normal((9, 2)), r.standard_normal((13, 2))
    ya, yb = r.integers(0, 3, 9), r.integers(0, 3, 13)
    assert abs(mmd2_joint((a, ya), (b, yb), bandwidth=1.1, n_classes=3)
               - mmd2_joint((b, yb), (a, ya), bandwidth=1.1, n_classes=3)) < 1e-14


def test_mmd_marginal_permutation_invariant():
    r = rng(5)
    a, b = r.standard_normal((10, 2)), r.standard_normal((8, 2))
    v = mmd2_marginal(a, b, bandwidth=1.0)
    assert abs(v - mmd2_marginal(a[r.permutation(10)], b[r.permutation(8)], bandwidth=1.0)) < 1e-14


@pytest.mark.parametrize("case", range(20))
def test_mmd_matches_double_loop_oracle(case):
    r = rng(100 + case)
    br, bf, d, k = r.integers(1, 17), r.integers(1, 17), r.integers(1, 4), r.integers(2, 4)
    xr, xf = r.standard_normal((br, d)), r.standard_normal((bf, d)) + 0.3
    yr, yf = r.integers(0, k, br), r.integers(0, k, bf)
    h = float(r.uniform(0.3, 2.0))
    got = mmd2_joint((xr, yr), (xf, yf), bandwidth=h, n_classes=k)
    assert abs(got - loop_mmd2(xr, xf, h, one_hot(yr, k), one_hot(yf, k))) < 1e-10
    assert abs(mmd2_marginal(xr, xf, bandwidth=h) - loop_mmd2(xr, xf, h)) < 1e-10


def test_mmd_relaxed_codes_extend_delta_kernel():
    r = rng(7)
    xr, xf = r.standard_normal((6, 2)), r.standard_normal((5, 2))
    lr = one_hot(r.integers(0, 2, 6), 2)
    p = r.uniform(size=(5, 1))
    lf = np.hstack([p, 1 - p])
    assert abs(mmd2_joint((xr, lr), (xf, lf), bandwidth=0.9) - loop_mmd2(xr, xf, 0.9, lr, lf)) < 1e-12


def test_mmd_gradients_match_finite_differences():
    r = rng(8)
    xr, xf = r.standard_normal((12, 3)), r.standard_normal((10, 3))
    yr = one_hot(r.integers(0, 2, 12), 2)
    yf = r.dirichlet([1, 1], size=10)
    h = 1.2
    _, gx, gl = mmd2_joint((xr, yr), (xf, yf), bandwidth=h, grad=True)
    fx = central_diff(lambda z: mmd2_joint((xr, yr), (z, yf), bandwidth=h), xf)
    fl = central_diff(lambda z: mmd2_joint((xr, yr), (xf, z), bandwidth=h), yf)
    pick = r.choice(xf.size, 20, replace=False)
    assert rel_err(gx.ravel()[pick], fx.ravel()[pick]) < 1e-4
    assert rel_err(gl, fl) < 1e-4
    _, gm = mmd2_marginal(xr, xf, bandwidth=h, grad=True)
    fm = central_diff(lambda z: mmd2_marginal(xr, z, bandwidth=h), xf)
    assert rel_err(gm, fm) < 1e-4


def test_mmd_errors():
    with pytest.raises(DataError):
        mmd2_marginal(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(DataError):
        mmd2_marginal(np.zeros((0, 2)), np.zeros((3, 2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 10_000), st.floats(0.2, 3.0))
def test_mmd_nonnegative(br, bf, seed, h):
    r = rng(seed)
    xr, xf = r.standard_normal((br, 2)), r.standard_normal((bf, 2))
    yr, yf = r.integers(0, 2, br), r.integers(0, 2, bf)
    assert mmd2_joint((xr, yr), (xf, yf), bandwidth=h, n_classes=2) >= -1e-12
    assert mmd2_marginal(xr, xf, bandwidth=h) >= -1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000))
def test_gram_symmetric_psd(n, seed):
    x = rng(seed).standard_normal((n, 2))
    k = rbf_kernel(x, x, median_heuristic(x))
    assert np.allclose(k, k.T)
    assert np.linalg.eigvalsh((k + k.T) / 2).min() >= -1e-8


def test_label_codes():
    assert np.array_equal(label_codes([0, 2], 3), [[1, 0, 0], [0, 0, 1]])
    soft = np.array([[0.2, 0.8]])
    assert label_codes(soft) is not soft and np.array_equal(label_codes(soft), soft)


def test_permutation_test_same_distribution_not_rejected():
    r = rng(9)
    _, p = mmd_permutation_test(r.standard_normal((150, 2)), r.standard_normal((150, 2)), 100, seed=1)
    assert p > 0.01


# ------------------------------------------------------------------- KCI

def test_kernel_factor_reconstructs_small_kernel():
    x = rng(10).standard_normal((40, 2))
    g = kernel_factor(x, config=KernelConfig(max_rank=40, cholesky_tol=1e-12))
    xs = (x - x.mean(0)) / x.std(0)
    k = rbf_kernel(xs, xs, median_heuristic(xs))
    hmat = np.eye(40) - 1 / 40
    assert np.allclose(g @ g.T, hmat @ k @ hmat, atol=1e-8)


def test_kci_refuses_tiny_samples():
    with pytest.raises(InsufficientDataError):
        kci_test(np.zeros(5), np.zeros(5))


def test_kci_dependent_detected():
    r = rng(11)
    x = r.standard_normal(300)
    y = x + 0.1 * r.standard_normal(300)
    assert not kci_test(x, y, n_permutations=100).independent


def test_kci_discrete_conditioning():
    r = rng(12)
    z = r.integers(0, 2, 300)
    x = z + 0.5 * r.standard_normal(300)
    y = z + 0.5 * r.standard_normal(300)
    assert not kci_test(x, y, n_permutations=100).independent
    assert kci_test(x, y, z[:, None], n_permutations=100, z_discrete=True).p_value > 0.01


@pytest.mark.slow
def test_kci_calibration_null():
    rej = 0
    for rep in range(50):
        r = rng(1000 + rep)
        rej += not kci_test(r.standard_normal(300), r.standard_normal(300), seed=rep).independent
    assert rej / 50 <= 0.15


@pytest.mark.slow
def test_kci_power():
    hits = 0
    for rep in range(50):
        r = rng(2000 + rep)
        x = r.standard_normal(300)
        hits += not kci_test(x, x + 0.3 * r.standard_normal(300), seed=rep).independent
    assert hits / 50 >= 0.95


@pytest.mark.slow
def test_kci_chain_conditional_independence():
    ok = 0
    for rep in range(50):
        r = rng(3000 + rep)
        x = r.standard_normal(500)
        z = np.tanh(x) + 0.3 * r.standard_normal(500)
        y = z**2 + 0.3 * r.standard_normal(500)
        ok += kci_test(x, y, z, seed=rep).independent
    assert ok / 50 >= 0.8


@pytest.mark.slow
def test_kci_affine_rescaling_rarely_flips():
    flips = 0
    for rep in range(50):
        r = rng(4000 + rep)
        x = r.standard_normal(200)
        y = 0.15 * x + r.standard_normal(200)
        a = kci_test(x, y, seed=rep).independent
        b = kci_test(10 * x + 3, 10 * y - 1, seed=rep).independent
        flips += a != b
    assert flips / 50 < 0.1

"""RBF/delta kernels, biased MMD estimators and a kernel conditional-independence test.

The CI test follows the residual formulation of KCI: centred kernel matrices of
``x`` and ``y`` are regressed on the kernel of ``z`` with ridge ``eps``,

    R = eps * (Kz + eps I)^-1,     Kx|z = R Kx R,     Ky|z = R Ky R,

and the statistic is the normalised Hilbert-Schmidt inner product
``tr(Kx|z Ky|z) / sqrt(tr(Kx|z^2) tr(Ky|z^2))``.  Its null distribution is
approximated by permuting the rows of the ``y`` residuals.  All kernel
matrices are handled through pivoted incomplete-Cholesky factors, which keeps
each test at O(n r^2) instead of O(n^3).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from augda.errors import ConfigError, DataError, InsufficientDataError


@dataclass(frozen=True)
class KernelConfig:
    """Kernel hyperparameters.

    ``bandwidth=None`` selects the median heuristic; a float fixes the RBF
    bandwidth.  The label kernel is always the delta kernel.
    """

    bandwidth: float | None = None
    ridge: float = 1e-3
    max_rank: int = 30
    max_rank_z: int = 100
    cholesky_tol: float = 1e-6
    median_max_rows: int = 1000

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigError(f"fixed bandwidth must be > 0, got {self.bandwidth}")
        if not self.ridge > 0:
            raise ConfigError(f"ridge must be > 0, got {self.ridge}")
        if self.max_rank < 1 or self.max_rank_z < 1:
            raise ConfigError("low-rank caps must be positive")

    @property
    def bandwidth_rule(self):
        return "median" if self.bandwidth is None else f"fixed({self.bandwidth})"


@dataclass(frozen=True)
class CiTestResult:
    statistic: float
    p_value: float
    independent: bool


def _as_2d(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DataError(f"expected a 1-D or 2-D array, got shape {a.shape}")
    return a


def median_heuristic(samples, max_rows=1000, seed=0):
    """Median pairwise Euclidean distance, falling back to 1.0 when it is zero.

    At most ``max_rows`` rows (drawn without replacement with a fixed seed)
    enter the computation.
    """
    x = _as_2d(samples)
    if x.shape[0] < 2:
        raise DataError("median heuristic needs at least two rows")
    if x.shape[0] > max_rows:
        idx = np.random.default_rng(seed).choice(x.shape[0], size=max_rows, replace=False)
        x = x[np.sort(idx)]
    if x.shape[1] == 0:
        return 1.0
    med = float(np.median(pdist(x)))
    return med if med > 0 else 1.0


def sq_dists(a, b):
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * a @ b.T, 0.0)


def rbf_kernel(a, b, bandwidth):
    """exp(-||a - b||^2 / (2 h^2)); an all-ones matrix when there are no columns."""
    a, b = _as_2d(a), _as_2d(b)
    if a.shape[1] != b.shape[1]:
        raise DataError(f"dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    if a.shape[1] == 0:
        return np.ones((a.shape[0], b.shape[0]))
    return np.exp(-sq_dists(a, b) / (2.0 * bandwidth**2))


def label_codes(labels, n_classes=None):
    """One-hot codes for integer labels; 2-D (possibly relaxed) codes pass through.

    The delta kernel is the inner product of one-hot codes, which extends
    linearly to relaxed codes.
    """
    labels = np.asarray(labels)
    if labels.ndim == 2:
        return labels.astype(float)
    labels = labels.astype(int)
    k = int(n_classes) if n_classes is not None else int(labels.max()) + 1
    out = np.zeros((labels.shape[0], k))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _bandwidth(config, real_x):
    config = config or KernelConfig()
    if config.bandwidth is not None:
        return config.bandwidth
    if real_x.shape[0] < 2:
        return 1.0
    return median_heuristic(real_x, config.median_max_rows)


def _mmd_core(xr, xf, lr, lf, h, grad):
    br, bf = xr.shape[0], xf.shape[0]
    if br == 0 or bf == 0:
        raise DataError("MMD needs non-empty samples")
    krr, krf, kff = rbf_kernel(xr, xr, h), rbf_kernel(xr, xf, h), rbf_kernel(xf, xf, h)
    if lr is not None:
        wrr, wrf, wff = krr * (lr @ lr.T), krf * (lr @ lf.T), kff * (lf @ lf.T)
    else:
        wrr, wrf, wff = krr, krf, kff
    value = wrr.sum() / br**2 - 2.0 * wrf.sum() / (br * bf) + wff.sum() / bf**2
    if not grad:
        return float(value)
    h2 = h * h
    # d/dxf_k of sum_{k,k'} wff = -(2/h^2) [rowsum(wff)_k xf_k - (wff xf)_k]
    g_ff = -(2.0 / (bf**2 * h2)) * (wff.sum(axis=1)[:, None] * xf - wff @ xf)
    g_rf = (2.0 / (br * bf * h2)) * (wrf.sum(axis=0)[:, None] * xf - wrf.T @ xr)
    gx = g_ff + g_rf
    gl = None
    if lr is not None:
        gl = (2.0 / bf**2) * (kff @ lf) - (2.0 / (br * bf)) * (krf.T @ lr)
    return float(value), gx, gl


def mmd2_joint(real_pairs, fake_pairs, config: KernelConfig | None = None, *,
               n_classes=None, grad=False, bandwidth=None):
    """Biased (V-statistic) squared MMD under the product kernel k(x, x') l(y, y').

    ``real_pairs`` and ``fake_pairs`` are ``(X, labels)`` tuples; labels may be
    integer vectors or (relaxed) one-hot matrices.  With ``grad=True`` returns
    ``(value, dX_fake, dlabels_fake)``.
    """
    xr, yr = real_pairs
    xf, yf = fake_pairs
    xr, xf = _as_2d(xr), _as_2d(xf)
    if xr.shape[1] != xf.shape[1]:
        raise DataError(f"dimension mismatch {xr.shape[1]} vs {xf.shape[1]}")
    if n_classes is None:
        n_classes = max(label_codes(yr).shape[1], label_codes(yf).shape[1])
    lr, lf = label_codes(yr, n_classes), label_codes(yf, n_classes)
    if lr.shape[1] != lf.shape[1]:
        raise DataError("label code widths differ")
    if lr.shape[0] != xr.shape[0] or lf.shape[0] != xf.shape[0]:
        raise DataError("features and labels disagree in length")
    h = bandwidth if bandwidth is not None else _bandwidth(config, xr)
    return _mmd_core(xr, xf, lr, lf, h, grad)


def mmd2_marginal(real_x, fake_x, config: KernelConfig | None = None, *, grad=False,
                  bandwidth=None):
    """Biased squared MMD between feature samples (label kernel dropped)."""
    xr, xf = _as_2d(real_x), _as_2d(fake_x)
    if xr.shape[1] != xf.shape[1]:
        raise DataError(f"dimension mismatch {xr.shape[1]} vs {xf.shape[1]}")
    h = bandwidth if bandwidth is not None else _bandwidth(config, xr)
    out = _mmd_core(xr, xf, None, None, h, grad)
    return out if not grad else out[:2]


def mmd_permutation_test(a, b, n_permutations=200, seed=0, config=None):
    """Two-sample permutation test on the biased MMD; returns ``(mmd2, p_value)``."""
    a, b = _as_2d(a), _as_2d(b)
    pooled = np.vstack([a, b])
    h = _bandwidth(config, pooled)
    k = rbf_kernel(pooled, pooled, h)
    n = a.shape[0]
    labels = np.r_[np.ones(n) / n, -np.ones(b.shape[0]) / b.shape[0]]
    stat = labels @ k @ labels
    rng = np.random.Generator(np.random.Philox(seed))
    exceed = 0
    for _ in range(n_permutations):
        p = rng.permutation(labels)
        exceed += (p @ k @ p) >= stat
    return float(stat), (1 + exceed) / (1 + n_permutations)


# ---------------------------------------------------------------------------
# low-rank kernel factors for the CI test


def _kernel_column_fn(data, discrete, bandwidth):
    cont = data[:, ~discrete]
    disc = data[:, discrete]

    def column(i):
        col = np.ones(data.shape[0])
        if cont.shape[1]:
            d2 = np.sum((cont - cont[i]) ** 2, axis=1)
            col *= np.exp(-d2 / (2.0 * bandwidth**2))
        if disc.shape[1]:
            col *= np.all(disc == disc[i], axis=1)
        return col

    return column


def incomplete_cholesky(column, n, max_rank, tol):
    """Pivoted incomplete Cholesky of a unit-diagonal kernel: K ~= G G^T."""
    g = np.zeros((n, max_rank))
    d = np.ones(n)
    r = 0
    for r in range(max_rank):
        i = int(np.argmax(d))
        if d[i] <= tol:
            break
        col = column(i)
        g[:, r] = (col - g[:, :r] @ g[i, :r]) / np.sqrt(d[i])
        d = np.maximum(d - g[:, r] ** 2, 0.0)
    else:
        r = max_rank
    return g[:, :r]


def kernel_factor(data, discrete=None, config: KernelConfig | None = None, max_rank=None):
    """Column-centred low-rank factor G with H K H ~= G G^T.

    Continuous columns share one RBF bandwidth; discrete columns contribute a
    delta kernel; the kernel is their product.
    """
    config = config or KernelConfig()
    data = _as_2d(data)
    discrete = np.zeros(data.shape[1], bool) if discrete is None else np.asarray(discrete, bool)
    if discrete.shape != (data.shape[1],):
        raise DataError("discrete mask does not match column count")
    cont = data[:, ~discrete]
    h = 1.0
    if cont.shape[1]:
        # standardise so the median heuristic sees comparable column scales
        sd = cont.std(axis=0)
        sd[sd == 0] = 1.0
        data = data.copy()
        data[:, ~discrete] = (cont - cont.mean(axis=0)) / sd
        h = config.bandwidth if config.bandwidth is not None else \
            median_heuristic(data[:, ~discrete], config.median_max_rows)
    rank = max_rank or config.max_rank
    g = incomplete_cholesky(_kernel_column_fn(data, discrete, h), data.shape[0],
                            min(rank, data.shape[0]), config.cholesky_tol)
    return g - g.mean(axis=0)


def residualize(gx, gz, ridge):
    """Low-rank form of R Gx with R = eps (Gz Gz^T + eps I)^-1 (Woodbury)."""
    if gz is None or gz.shape[1] == 0:
        return gx
    m = ridge * np.eye(gz.shape[1]) + gz.T @ gz
    return gx - gz @ np.linalg.solve(m, gz.T @ gx)


def stable_seed(*parts):
    """Process-independent integer seed from arbitrary printable parts."""
    return zlib.crc32("|".join(map(str, parts)).encode())


def hsic_permutation(gx, gy, n_permutations, seed, chunk=50):
    """Normalised HSIC of two centred factors with a row-permutation p-value."""
    num = np.sum((gx.T @ gy) ** 2)
    den = np.sqrt(np.sum((gx.T @ gx) ** 2) * np.sum((gy.T @ gy) ** 2))
    if den <= 1e-300:
        return 0.0, 1.0
    stat = num / den
    rng = np.random.Generator(np.random.Philox(seed))
    n = gx.shape[0]
    perms = np.argsort(rng.random((n_permutations, n)), axis=1)
    exceed = 0
    gxt = gx.T
    for start in range(0, n_permutations, chunk):
        block = gy[perms[start:start + chunk]]  # (p, n, ry)
        prod = np.matmul(gxt[None], block)
        vals = np.sum(prod**2, axis=(1, 2)) / den
        exceed += int(np.sum(vals >= stat * (1 - 1e-12)))
    return float(stat), (1 + exceed) / (1 + n_permutations)


def kci_test(x, y, z=None, n_permutations=200, alpha=0.05, config: KernelConfig | None = None,
             *, seed=0, x_discrete=False, y_discrete=False, z_discrete=None, min_samples=10):
    """Kernel (conditional) independence test of ``x`` and ``y`` given ``z``.

    With ``z`` empty or None this is an unconditional HSIC permutation test.
    ``*_discrete`` flags switch the corresponding variables to a delta kernel
    (``z_discrete`` may be a per-column mask).
    """
    config = config or KernelConfig()
    x, y = _as_2d(x), _as_2d(y)
    n = x.shape[0]
    if y.shape[0] != n or (z is not None and _as_2d(z).shape[0] != n):
        raise DataError("x, y and z must have the same number of rows")
    if n < min_samples:
        raise InsufficientDataError(f"CI test needs at least {min_samples} samples, got {n}")
    if not (0 < alpha < 1):
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    gx = kernel_factor(x, np.full(x.shape[1], bool(x_discrete)), config)
    gy = kernel_factor(y, np.full(y.shape[1], bool(y_discrete)), config)
    gz = None
    if z is not None and _as_2d(z).shape[1] > 0:
        z = _as_2d(z)
        mask = np.zeros(z.shape[1], bool) if z_discrete is None else np.broadcast_to(
            np.asarray(z_discrete, bool), (z.shape[1],))
        gz = kernel_factor(z, mask, config, max_rank=config.max_rank_z)
    rx = residualize(gx, gz, config.ridge)
    ry = residualize(gy, gz, config.ridge)
    stat, p = hsic_permutation(rx, ry, n_permutations, seed)
    return CiTestResult(stat, p, p > alpha)

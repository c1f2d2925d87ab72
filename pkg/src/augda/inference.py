"""Variational inference over the domain parameters theta and target prediction.

Every domain (each source and the target) gets a diagonal Gaussian
``q(theta) = N(mu, sigma^2)`` against a standard normal prior.  The training
loss is a sum of per-domain terms:

* source domain i, module j: ``KL_j / m_i + E_q[MMD^2]`` between real rows of
  ``(V_j, PA(V_j))`` and rows whose ``V_j`` is generated from the real parents;
* target: ``KL / m_t + E_q[MMD^2]`` between target rows and full-bundle
  samples over the Markov-blanket features.

The KL of a theta group shared by several modules is charged to the first of
them, so module terms add up exactly to the joint per-domain loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from augda.classifier import fit_classifier
from augda.data import MultiDomainDataset
from augda.errors import ConfigError, DataError, NonFiniteGradientError, TrainingDiverged
from augda.generative import (
    BundleDraws,
    GeneratorBundle,
    GeneratorConfig,
    build_bundle,
    draw_noise,
    module_backward,
    module_forward,
    run_bundle,
    backward_bundle,
    sample_domain,
)
from augda.kernels import label_codes, median_heuristic, mmd2_joint, mmd2_marginal
from augda.neural import AdamState, adam_step

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6


# ------------------------------------------------------------------ basics

def kl_gaussian_std_normal(mu, sigma):
    """KL( N(mu, diag sigma^2) || N(0, I) ) = 1/2 sum(-1 - log sigma^2 + mu^2 + sigma^2)."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    if mu.shape != sigma.shape:
        raise DataError("mu and sigma shapes differ")
    if np.any(sigma <= 0):
        raise DataError("sigma must be positive")
    return float(0.5 * np.sum(-1.0 - 2.0 * np.log(sigma) + mu**2 + sigma**2))


def reparameterize(mu, sigma, eps):
    """theta = mu + eps * sigma, with sigma floored at ``SIGMA_FLOOR``."""
    mu, sigma, eps = (np.asarray(a, dtype=float) for a in (mu, sigma, eps))
    if mu.shape != sigma.shape or np.broadcast_shapes(mu.shape, eps.shape) != eps.shape:
        raise DataError("mu, sigma and eps shapes do not agree")
    if np.any(sigma < SIGMA_FLOOR):
        log.info("sigma below %.0e floored", SIGMA_FLOOR)
        sigma = np.maximum(sigma, SIGMA_FLOOR)
    return mu + eps * sigma


@dataclass
class ThetaPosterior:
    """Gaussian posteriors per domain; row ``k`` is source ``k``, the last row the target."""

    mu: np.ndarray  # [n_domains, n_theta]
    log_sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        self.log_sigma = np.atleast_2d(np.asarray(self.log_sigma, dtype=float))
        if self.mu.shape != self.log_sigma.shape:
            raise DataError("mu and log_sigma shapes differ")

    @classmethod
    def init(cls, n_domains, n_theta, log_sigma=math.log(0.1)):
        return cls(np.zeros((n_domains, n_theta)), np.full((n_domains, n_theta), float(log_sigma)))

    @property
    def sigma(self):
        return np.maximum(np.exp(self.log_sigma), SIGMA_FLOOR)

    @property
    def n_domains(self):
        return self.mu.shape[0]

    @property
    def n_theta(self):
        return self.mu.shape[1]

    @property
    def target(self):
        return self.n_domains - 1

    def copy(self):
        return ThetaPosterior(self.mu.copy(), self.log_sigma.copy())

    def to_dict(self, names=None):
        names = names or [f"source{k}" for k in range(self.n_domains - 1)] + ["target"]
        return {nm: {"mu": self.mu[k].tolist(), "sigma": self.sigma[k].tolist()}
                for k, nm in enumerate(names)}

    @classmethod
    def from_dict(cls, d):
        rows = list(d.values())
        return cls([r["mu"] for r in rows], [np.log(r["sigma"]) for r in rows])


@dataclass
class TrainConfig:
    batch_size: int = 128
    svi_samples: int = 1
    epochs: int = 400
    learning_rate: float = 3e-3
    posterior_learning_rate: float = 1e-2
    init_log_sigma: float = math.log(0.1)
    init_mu_scale: float = 0.0
    prediction_samples: int = 20
    synthetic_rows: int = 2000
    classifier_hidden: int = 32
    classifier_steps: int = 500
    classifier_learning_rate: float = 1e-2
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.prediction_samples < 1:
            raise ConfigError("prediction_samples must be >= 1")
        if self.svi_samples < 1 or self.epochs < 0:
            raise ConfigError("svi_samples must be >= 1 and epochs >= 0")
        if self.synthetic_rows < 2:
            raise ConfigError("synthetic_rows must be >= 2")


# --------------------------------------------------------------- objective

@dataclass
class Minibatches:
    sources: list  # (x [B, d], y [B]) per source domain
    target: np.ndarray  # [B, d]


@dataclass
class SviDraws:
    """Frozen randomness for one evaluation of the objective."""

    eps: np.ndarray  # [svi_samples, n_domains, n_theta]
    source: list  # [domain][sample] -> BundleDraws
    target: list  # [sample] -> BundleDraws


def draw_svi(bundle, minibatches: Minibatches, svi_samples, rng) -> SviDraws:
    n_dom = len(minibatches.sources) + 1
    eps = rng.normal(size=(svi_samples, n_dom, bundle.n_theta))
    source = [[draw_noise(bundle, len(y), rng) for _ in range(svi_samples)]
              for _, y in minibatches.sources]
    target = [draw_noise(bundle, minibatches.target.shape[0], rng) for _ in range(svi_samples)]
    return SviDraws(eps, source, target)


def _kl_owner(bundle):
    """For each theta coordinate, the first module (topological order) that uses it."""
    owner = {}
    for m in bundle.modules:
        if m.theta_index is not None and m.theta_index not in owner:
            owner[m.theta_index] = m.node
    return owner


def _kl_and_grads(mu, log_sigma, coords):
    """KL over ``coords`` plus its gradients w.r.t. mu and log sigma."""
    gmu, gls = np.zeros_like(mu), np.zeros_like(log_sigma)
    if not coords:
        return 0.0, gmu, gls
    c = list(coords)
    sigma = np.maximum(np.exp(log_sigma[c]), SIGMA_FLOOR)
    kl = kl_gaussian_std_normal(mu[c], sigma)
    gmu[c] = mu[c]
    gls[c] = np.where(np.exp(log_sigma[c]) > SIGMA_FLOOR, sigma**2 - 1.0, 0.0)
    return kl, gmu, gls


def _theta_and_jacobian(mu, log_sigma, eps):
    raw = np.exp(log_sigma)
    sigma = np.maximum(raw, SIGMA_FLOOR)
    theta = reparameterize(mu, sigma, eps)
    dlog = np.where(raw > SIGMA_FLOOR, eps * sigma, 0.0)  # d theta / d log sigma
    return theta, dlog


def _module_real_parts(bundle, module, x, y):
    """Real values of (V_j, feature parents) and the label, per the module's joint."""
    dag = bundle.dag
    lab = bundle.label
    parts = []
    if module.node != lab:
        parts.append(x[:, bundle.node_columns(module.node)])
    for p in module.parent_nodes:
        if p != lab:
            parts.append(x[:, bundle.node_columns(p)])
    xr = np.hstack(parts) if parts else np.zeros((x.shape[0], 0))
    has_label = module.node == lab or lab in module.parent_nodes
    return xr, has_label


def module_bandwidth(bundle, module, x, y):
    key = module.node
    if key not in bundle.bandwidths:
        xr, _ = _module_real_parts(bundle, module, x, y)
        bundle.bandwidths[key] = median_heuristic(xr) if xr.shape[1] else 1.0
    return bundle.bandwidths[key]


def target_bandwidth(bundle, x_target):
    if "target" not in bundle.bandwidths:
        cols = bundle.blanket_columns()
        bundle.bandwidths["target"] = median_heuristic(x_target[:, cols]) if cols else 1.0
    return bundle.bandwidths["target"]


def module_source_term(bundle, posterior, domain, module, batch, draws: BundleDraws, eps,
                       m_domain, owner=None):
    """Loss of one module in one source domain and its gradients.

    Returns ``(loss, mmd, kl, param_grads (module only), grad_mu, grad_log_sigma)``;
    the expectation over theta is the average over the rows of ``eps``.
    """
    x, y = batch
    lab = bundle.label
    owner = _kl_owner(bundle) if owner is None else owner
    mu, ls = posterior.mu[domain], posterior.log_sigma[domain]
    coords = [module.theta_index] if owner.get(module.theta_index) == module.node else []
    kl, gmu, gls = _kl_and_grads(mu, ls, coords)
    kl_w = 1.0 / m_domain
    gmu, gls = gmu * kl_w, gls * kl_w
    grads = [np.zeros_like(p) for p in module.mlp.params]
    xr, has_label = _module_real_parts(bundle, module, x, y)
    h = bundle.bandwidths[module.node]
    y_code = label_codes(y, bundle.n_classes)
    parents = {p: (y_code if p == lab else x[:, bundle.node_columns(p)]) for p in module.parent_nodes}
    n_s = eps.shape[0]
    mmd_total = 0.0
    for s in range(n_s):
        theta, dlog = _theta_and_jacobian(mu, ls, eps[s])
        th = theta[module.theta_index] if module.theta_index is not None else None
        mp = module_forward(bundle, module, parents, draws[s].noise[module.node], th,
                            draws[s].gumbel if module.is_discrete else None, relaxed=True)
        if module.node == lab:
            xf = xr
            val, gx, gl = mmd2_joint((xr, y_code), (xf, mp.value), n_classes=bundle.n_classes,
                                     grad=True, bandwidth=h)
            g_value = gl
        else:
            w = module.out_width
            xf = np.hstack([mp.value, xr[:, w:]])
            if has_label:
                val, gx, _ = mmd2_joint((xr, y_code), (xf, y_code), n_classes=bundle.n_classes,
                                        grad=True, bandwidth=h)
            else:
                val, gx = mmd2_marginal(xr, xf, grad=True, bandwidth=h)
            g_value = gx[:, :w]
        mmd_total += val / n_s
        pg, _, tg = module_backward(bundle, mp, g_value / n_s)
        grads = [a + b for a, b in zip(grads, pg)]
        if tg is not None:
            k = module.theta_index
            gmu[k] += tg.sum()
            gls[k] += tg.sum() * dlog[k]
    return kl_w * kl + mmd_total, mmd_total, kl, grads, gmu, gls


def source_domain_loss(bundle, posterior, domain, batch, draws, eps, m_domain):
    """Joint loss of one source domain: full-vector KL plus every module's MMD."""
    x, y = batch
    lab = bundle.label
    mu, ls = posterior.mu[domain], posterior.log_sigma[domain]
    kl, gmu, gls = _kl_and_grads(mu, ls, list(range(bundle.n_theta)))
    kl_w = 1.0 / m_domain
    gmu, gls = gmu * kl_w, gls * kl_w
    y_code = label_codes(y, bundle.n_classes)
    real = {p: x[:, bundle.node_columns(p)] for p in range(len(bundle.dag.nodes)) if p != lab}
    real[lab] = y_code
    n_s = eps.shape[0]
    grads = {m.node: [np.zeros_like(p) for p in m.mlp.params] for m in bundle.modules}
    mmd = {m.node: 0.0 for m in bundle.modules}
    for s in range(n_s):
        theta, dlog = _theta_and_jacobian(mu, ls, eps[s])
        for m in bundle.modules:
            th = theta[m.theta_index] if m.theta_index is not None else None
            mp = module_forward(bundle, m, real, draws[s].noise[m.node], th,
                                draws[s].gumbel if m.is_discrete else None, relaxed=True)
            feats = [] if m.node == lab else [m.node]
            feats += [p for p in m.parent_nodes if p != lab]
            xr = np.hstack([real[f] for f in feats]) if feats else np.zeros((len(y), 0))
            xf = np.hstack([mp.value if f == m.node else real[f] for f in feats]) if feats else xr
            h = bundle.bandwidths[m.node]
            if m.node == lab:
                val, _, g_value = mmd2_joint((xr, y_code), (xf, mp.value), n_classes=bundle.n_classes,
                                             grad=True, bandwidth=h)
            elif lab in m.parent_nodes:
                val, gx, _ = mmd2_joint((xr, y_code), (xf, y_code), n_classes=bundle.n_classes,
                                        grad=True, bandwidth=h)
                g_value = gx[:, :m.out_width]
            else:
                val, gx = mmd2_marginal(xr, xf, grad=True, bandwidth=h)
                g_value = gx[:, :m.out_width]
            mmd[m.node] += val / n_s
            pg, _, tg = module_backward(bundle, mp, g_value / n_s)
            grads[m.node] = [a + b for a, b in zip(grads[m.node], pg)]
            if tg is not None:
                gmu[m.theta_index] += tg.sum()
                gls[m.theta_index] += tg.sum() * dlog[m.theta_index]
    flat = [g for m in bundle.modules for g in grads[m.node]]
    return kl_w * kl + sum(mmd.values()), mmd, kl, flat, gmu, gls


def target_loss(bundle, posterior, x_target, draws, eps, m_domain):
    """KL of the target posterior plus the blanket-feature MMD of full-bundle samples."""
    t = posterior.target
    mu, ls = posterior.mu[t], posterior.log_sigma[t]
    kl, gmu, gls = _kl_and_grads(mu, ls, list(range(bundle.n_theta)))
    kl_w = 1.0 / m_domain
    gmu, gls = gmu * kl_w, gls * kl_w
    cols = bundle.blanket_columns()
    grads = [np.zeros_like(p) for p in bundle.params]
    if not cols:
        return kl_w * kl, 0.0, kl, grads, gmu, gls
    h = bundle.bandwidths["target"]
    real = x_target[:, cols]
    where = {c: k for k, c in enumerate(cols)}
    n_s = eps.shape[0]
    mmd_total = 0.0
    for s in range(n_s):
        theta, dlog = _theta_and_jacobian(mu, ls, eps[s])
        values, passes = run_bundle(bundle, theta, x_target, draws[s], relaxed=True)
        fake = real.copy()
        for node, v in values.items():
            if node in passes and node != bundle.label:
                fake[:, [where[c] for c in bundle.node_columns(node)]] = v
        val, gx = mmd2_marginal(real, fake, grad=True, bandwidth=h)
        mmd_total += val / n_s
        vg = {node: gx[:, [where[c] for c in bundle.node_columns(node)]] / n_s
              for node in passes if node != bundle.label}
        pg, tg = backward_bundle(bundle, passes, vg)
        grads = [a + b for a, b in zip(grads, pg)]
        gmu += tg
        gls += tg * dlog
    return kl_w * kl + mmd_total, mmd_total, kl, grads, gmu, gls


@dataclass
class SviResult:
    loss: float
    param_grads: list
    grad_mu: np.ndarray
    grad_log_sigma: np.ndarray
    terms: dict


def svi_objective(bundle: GeneratorBundle, posterior: ThetaPosterior, minibatches: Minibatches,
                  config: TrainConfig | None = None, *, domain_sizes=None, draws: SviDraws | None = None,
                  rng=None, per_module=False) -> SviResult:
    """Loss and gradients for every module parameter and variational parameter.

    ``domain_sizes`` gives ``m`` for the ``1/m`` KL weights (defaults to the
    batch sizes).  Pass ``draws`` to freeze the randomness; otherwise it is
    drawn from ``rng``.  ``per_module=True`` evaluates source terms one module
    at a time; the result is identical to the joint evaluation.
    """
    config = config or TrainConfig()
    n_src = len(minibatches.sources)
    if n_src + 1 != posterior.n_domains:
        raise DataError(f"posterior covers {posterior.n_domains} domains, batches {n_src + 1}")
    if posterior.n_theta != bundle.n_theta:
        raise DataError("posterior and bundle disagree on the number of theta groups")
    for x, y in minibatches.sources:
        if len(y) == 0:
            raise DataError("empty source minibatch")
    if minibatches.target.shape[0] == 0:
        raise DataError("empty target minibatch")
    if domain_sizes is None:
        domain_sizes = [len(y) for _, y in minibatches.sources] + [minibatches.target.shape[0]]
    if draws is None:
        rng = rng if rng is not None else np.random.Generator(np.random.Philox(config.seed))
        draws = draw_svi(bundle, minibatches, config.svi_samples, rng)
    for m in bundle.modules:
        if m.node not in bundle.bandwidths:
            raise DataError("module bandwidths are not set; call freeze_bandwidths first")

    grad_mu = np.zeros_like(posterior.mu)
    grad_ls = np.zeros_like(posterior.log_sigma)
    pgrads = [np.zeros_like(p) for p in bundle.params]
    offsets, k = {}, 0
    for m in bundle.modules:
        offsets[m.node] = k
        k += len(m.mlp.params)
    terms = {"source": [], "mmd": {}, "kl": []}
    total = 0.0
    owner = _kl_owner(bundle)
    for i, batch in enumerate(minibatches.sources):
        eps = draws.eps[:, i, :]
        if per_module:
            dom = 0.0
            kl_i = 0.0
            for m in bundle.modules:
                loss, mmd, kl, g, gmu, gls = module_source_term(
                    bundle, posterior, i, m, batch, [d for d in draws.source[i]], eps,
                    domain_sizes[i], owner)
                dom += loss
                kl_i += kl
                terms["mmd"][(i, m.node)] = mmd
                o = offsets[m.node]
                for r, gg in enumerate(g):
                    pgrads[o + r] += gg
                grad_mu[i] += gmu
                grad_ls[i] += gls
        else:
            dom, mmd, kl_i, g, gmu, gls = source_domain_loss(
                bundle, posterior, i, batch, draws.source[i], eps, domain_sizes[i])
            for node, v in mmd.items():
                terms["mmd"][(i, node)] = v
            pgrads = [a + b for a, b in zip(pgrads, g)]
            grad_mu[i] += gmu
            grad_ls[i] += gls
        terms["source"].append(dom)
        terms["kl"].append(kl_i)
        total += dom
    t = posterior.target
    loss, mmd, kl, g, gmu, gls = target_loss(bundle, posterior, minibatches.target, draws.target,
                                             draws.eps[:, t, :], domain_sizes[t])
    terms["target"] = loss
    terms["mmd"][("target",)] = mmd
    terms["kl"].append(kl)
    pgrads = [a + b for a, b in zip(pgrads, g)]
    grad_mu[t] += gmu
    grad_ls[t] += gls
    total += loss
    return SviResult(float(total), pgrads, grad_mu, grad_ls, terms)


# ---------------------------------------------------------------- training

def freeze_bandwidths(bundle, dataset: MultiDomainDataset):
    """Median-heuristic bandwidths per module (pooled sources) and for the target term."""
    x, y, _ = dataset.pooled_source()
    for m in bundle.modules:
        module_bandwidth(bundle, m, x, y)
    target_bandwidth(bundle, dataset.target_features)
    return bundle.bandwidths


def _sample_batch(rng, n, b):
    return rng.choice(n, size=b, replace=n < b)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    mmd: dict
    kl: list


def train(dataset: MultiDomainDataset, dag, config: TrainConfig | None = None, *, bundle=None,
          history: list | None = None):
    """Fit generators and per-domain theta posteriors by Adam on the SVI loss.

    Returns ``(bundle, posterior)``.  One ``EpochRecord`` per epoch is appended
    to ``history`` when given.  A non-finite loss or gradient raises
    :class:`TrainingDiverged` carrying the last finite ``(bundle, posterior)``.
    """
    config = config or TrainConfig()
    bundle = bundle or build_bundle(dag, config.generator)
    if bundle.dag.feature_names and list(bundle.dag.feature_names) != list(dataset.feature_names):
        raise DataError("graph and dataset feature names differ")
    freeze_bandwidths(bundle, dataset)
    posterior = ThetaPosterior.init(dataset.n_sources + 1, bundle.n_theta, config.init_log_sigma)
    sizes = dataset.domain_sizes
    rng = np.random.Generator(np.random.Philox([config.seed, 23]))
    posterior.mu += config.init_mu_scale * rng.normal(size=posterior.mu.shape)
    steps = max(1, math.ceil(max(sizes) / config.batch_size))
    gen_state = AdamState.for_params(bundle.params, config.learning_rate)
    post_state = AdamState.for_params([posterior.mu, posterior.log_sigma],
                                      config.posterior_learning_rate)
    last_good = (bundle.copy(), posterior.copy())
    for epoch in range(config.epochs):
        losses, mmd_acc, kl_acc = [], {}, None
        for _ in range(steps):
            batches = Minibatches(
                [(x[idx], y[idx]) for x, y in dataset.source_domains
                 for idx in [_sample_batch(rng, len(y), config.batch_size)]],
                dataset.target_features[_sample_batch(rng, sizes[-1], config.batch_size)])
            res = svi_objective(bundle, posterior, batches, config, domain_sizes=sizes, rng=rng)
            if not np.isfinite(res.loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", last_good)
            try:
                new_p, gen_state = adam_step(gen_state, bundle.params, res.param_grads)
                (mu, ls), post_state = adam_step(post_state, [posterior.mu, posterior.log_sigma],
                                                 [res.grad_mu, res.grad_log_sigma])
            except NonFiniteGradientError as exc:
                raise TrainingDiverged(f"non-finite gradient at epoch {epoch}", last_good) from exc
            bundle.set_params(new_p)
            posterior = ThetaPosterior(mu, ls)
            losses.append(res.loss)
            for k, v in res.terms["mmd"].items():
                mmd_acc[k] = mmd_acc.get(k, 0.0) + v / steps
            kl_acc = np.asarray(res.terms["kl"]) / steps + (0 if kl_acc is None else kl_acc)
        last_good = (bundle.copy(), posterior.copy())
        rec = EpochRecord(epoch, float(np.mean(losses)), mmd_acc, list(map(float, kl_acc)))
        if history is not None:
            history.append(rec)
        if epoch % 25 == 0 or epoch == config.epochs - 1:
            log.info("epoch %d loss %.5f", epoch, rec.loss)
    return bundle, posterior


# -------------------------------------------------------------- prediction

def _sorted_rows(x):
    order = np.lexsort(x.T[::-1])
    return x[order]


def predict_target(bundle: GeneratorBundle, posterior: ThetaPosterior, x_target,
                   config: TrainConfig | None = None, *, thetas=None, seed=None):
    """Average over theta draws of classifiers trained on generated target data.

    For each of ``L`` draws from the target posterior (or the rows of
    ``thetas``), ``synthetic_rows`` labelled rows are generated with
    conditioning features resampled from the target, a softmax classifier is
    fitted on the blanket features, and its probabilities on ``x_target`` are
    averaged.  Target rows are sorted before resampling so the output does not
    depend on their order.
    """
    config = config or TrainConfig()
    if not bundle.bandwidths:
        raise DataError("bundle has not been trained")
    x_target = np.asarray(x_target, dtype=float)
    seed = config.seed if seed is None else seed
    rng = np.random.Generator(np.random.Philox([seed, 31]))
    if thetas is None:
        t = posterior.target
        eps = rng.normal(size=(config.prediction_samples, bundle.n_theta))
        thetas = reparameterize(np.tile(posterior.mu[t], (len(eps), 1)),
                                np.tile(posterior.sigma[t], (len(eps), 1)), eps)
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    cols = bundle.blanket_columns()
    pool = _sorted_rows(x_target)
    probs = np.zeros((x_target.shape[0], bundle.n_classes))
    for l, theta in enumerate(thetas):
        idx = rng.integers(0, pool.shape[0], size=config.synthetic_rows)
        xs, ys = sample_domain(bundle, theta, pool[idx], config.synthetic_rows,
                               seed=[seed, 37, l])
        clf = fit_classifier(xs[:, cols], ys, bundle.n_classes, hidden=config.classifier_hidden,
                             steps=config.classifier_steps,
                             learning_rate=config.classifier_learning_rate, seed=seed + l)
        probs += clf.predict_proba(x_target[:, cols])
    probs /= len(thetas)
    return probs / probs.sum(axis=1, keepdims=True)


def pooled_baseline(dataset: MultiDomainDataset, config: TrainConfig | None = None, seed=None):
    """Softmax classifier on all merged source rows and features; target probabilities."""
    config = config or TrainConfig()
    x, y, _ = dataset.pooled_source()
    clf = fit_classifier(x, y, dataset.n_classes, hidden=config.classifier_hidden,
                         steps=config.classifier_steps,
                         learning_rate=config.classifier_learning_rate,
                         seed=config.seed if seed is None else seed)
    return clf.predict_proba(dataset.target_features)


# ------------------------------------------------------------ gamma demo

@dataclass
class DensityGrid:
    grid: np.ndarray
    density: np.ndarray

    def integral(self):
        return float(np.trapezoid(self.density, self.grid))

    def mean(self):
        return float(np.trapezoid(self.grid * self.density, self.grid))

    def std(self):
        mu = self.mean()
        return float(np.sqrt(np.trapezoid((self.grid - mu) ** 2 * self.density, self.grid)))

    def mode(self):
        return float(self.grid[np.argmax(self.density)])


def gamma_posterior_demo(observed_var_x=None, shape_y=3.0, scale_y=1.0, shape_x=1.5, scale_x=1.0,
                         n_grid=20001):
    """Posterior of theta_Y given Var(X) = v when Var(X) = theta_Y + theta_X.

    p(theta_Y | v) is proportional to Gamma(theta_Y; shape_y, scale_y) *
    Gamma(v - theta_Y; shape_x, scale_x) on (0, v), normalised by the
    trapezoid rule on an ``n_grid`` point grid.  With ``observed_var_x=None``
    the prior density of theta_Y is returned on a grid over (0, 20 * scale_y).
    """
    if n_grid < 3:
        raise ConfigError("n_grid must be >= 3")
    if observed_var_x is None:
        grid = np.linspace(0.0, 20.0 * scale_y, n_grid)
        return DensityGrid(grid, stats.gamma.pdf(grid, shape_y, scale=scale_y))
    v = float(observed_var_x)
    if not v > 0:
        raise DataError("observed variance must be positive")
    grid = np.linspace(0.0, v, n_grid)
    dens = stats.gamma.pdf(grid, shape_y, scale=scale_y) * stats.gamma.pdf(v - grid, shape_x, scale=scale_x)
    z = np.trapezoid(dens, grid)
    if not z > 0:
        raise DataError("posterior has no mass on the grid")
    return DensityGrid(grid, dens / z)

"""Latent-variable conditional generators for the label and its children.

Each module maps ``(parent values, noise, theta)`` to a node value with a small
MLP.  A bundle holds one module per node in ``CH(Y) + {Y}`` and samples them in
topological order.  Parents outside the bundle are conditioning inputs taken
from observed rows.

The label module outputs logits.  At prediction time the label is drawn from
the softmax (Gumbel-max); during training a relaxed one-hot code
``softmax((logits + g) / temperature)`` is passed to child modules so that
gradients flow through it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from augda.classifier import softmax
from augda.dag import AugmentedDag
from augda.errors import ConfigError, DataError, GraphError
from augda.neural import Mlp, backward, forward, load_checkpoint, mlp_arrays, mlp_from_arrays, save_checkpoint


@dataclass
class GeneratorConfig:
    hidden: int = 32
    noise_dim: int = 1
    theta_dim: int = 1
    temperature: float = 0.5
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1 or self.noise_dim < 0:
            raise ConfigError("generator widths must be positive")
        if self.theta_dim != 1:
            raise ConfigError("each theta group feeds exactly one input coordinate")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass(eq=False)
class GeneratorModule:
    node: int
    parent_nodes: list
    mlp: Mlp
    noise_dim: int = 1
    theta_dim: int = 0
    output_kind: str = "continuous"  # or "discrete"
    theta_index: int | None = None  # coordinate of the shared theta vector

    @property
    def out_width(self):
        return self.mlp.layer_sizes[-1]

    @property
    def is_discrete(self):
        return self.output_kind == "discrete"


@dataclass(eq=False)
class GeneratorBundle:
    dag: AugmentedDag
    modules: list  # topological order
    theta_groups: list  # node-index groups, one theta coordinate each
    conditioning: list  # non-bundle parent nodes
    temperature: float = 0.5
    bandwidths: dict = field(default_factory=dict)

    @property
    def n_classes(self):
        return self.dag.n_classes

    @property
    def n_theta(self):
        return len(self.theta_groups)

    @property
    def label(self):
        return self.dag.label_index

    @property
    def nodes(self):
        return [m.node for m in self.modules]

    def module_for(self, node):
        for m in self.modules:
            if m.node == node:
                return m
        raise KeyError(node)

    def node_columns(self, node):
        return list(self.dag.nodes[node].features)

    def feature_nodes(self):
        """Feature nodes reachable by sampling: bundle features plus conditioning nodes."""
        return sorted(n for n in set(self.nodes) | set(self.conditioning)
                      if not self.dag.nodes[n].is_label)

    def blanket_columns(self):
        cols = []
        for n in self.feature_nodes():
            cols.extend(self.node_columns(n))
        return sorted(cols)

    @property
    def params(self):
        out = []
        for m in self.modules:
            out.extend(m.mlp.params)
        return out

    def set_params(self, params):
        k = 0
        for m in self.modules:
            n = len(m.mlp.params)
            m.mlp.set_params(params[k:k + n])
            k += n

    def copy(self):
        mods = [GeneratorModule(m.node, list(m.parent_nodes), m.mlp.copy(), m.noise_dim,
                                m.theta_dim, m.output_kind, m.theta_index) for m in self.modules]
        return GeneratorBundle(self.dag.copy(), mods, [list(g) for g in self.theta_groups],
                               list(self.conditioning), self.temperature, dict(self.bandwidths))


def _value_width(dag, node):
    nd = dag.nodes[node]
    return dag.n_classes if nd.is_label else nd.width


def build_bundle(dag: AugmentedDag, config: GeneratorConfig | None = None) -> GeneratorBundle:
    """One module per node in ``CH(Y) + {Y}``; theta groups shared across modules."""
    config = config or GeneratorConfig()
    if dag.undirected:
        raise GraphError("generator bundle needs an instantiated (fully directed) graph")
    try:
        y = dag.label_index
    except GraphError as exc:
        raise GraphError("graph has no label node; cannot build generators") from exc
    members = {y} | set(dag.children(y))
    order = [i for i in dag.topological_order() if i in members]
    groups = [list(g) for g in dag.theta_groups if set(g) & members]
    rng = np.random.Generator(np.random.Philox([config.seed, 11]))
    modules = []
    for i in order:
        parents = dag.parents(i)
        k = next((gi for gi, g in enumerate(groups) if i in g), None)
        theta_dim = config.theta_dim if k is not None else 0
        n_in = sum(_value_width(dag, p) for p in parents) + config.noise_dim + theta_dim
        n_out = _value_width(dag, i)
        mlp = Mlp.init([n_in, config.hidden, n_out], rng, config.activation)
        kind = "discrete" if dag.nodes[i].is_label else "continuous"
        modules.append(GeneratorModule(i, parents, mlp, config.noise_dim, theta_dim, kind, k))
    conditioning = sorted({p for m in modules for p in m.parent_nodes} - members)
    return GeneratorBundle(dag, modules, groups, conditioning, config.temperature)


# ---------------------------------------------------------------- module pass

@dataclass
class ModulePass:
    module: GeneratorModule
    cache: object
    value: np.ndarray
    probs: np.ndarray | None = None  # relaxed softmax output for the label
    relaxed: bool = False
    parent_widths: tuple = ()


def module_forward(bundle, module, parent_values, noise, theta, gumbel=None, relaxed=True):
    """Evaluate one module.

    ``parent_values`` maps parent node -> [n, width] array (label parents as
    codes), ``noise`` is [n, noise_dim] and ``theta`` the scalar (or
    theta_dim vector) for this module's group.  For the label module ``gumbel``
    holds standard Gumbel noise [n, n_classes].
    """
    n = noise.shape[0]
    parts, widths = [], []
    for p in module.parent_nodes:
        if p not in parent_values:
            raise DataError(f"missing value for parent {bundle.dag.nodes[p].name}")
        v = np.asarray(parent_values[p], dtype=float)
        if v.shape[0] != n:
            raise DataError("parent values and noise disagree in length")
        parts.append(v)
        widths.append(v.shape[1])
    parts.append(noise)
    if module.theta_dim:
        th = np.broadcast_to(np.atleast_1d(np.asarray(theta, dtype=float)), (module.theta_dim,))
        parts.append(np.tile(th, (n, 1)))
    out, cache = forward(module.mlp, np.hstack(parts))
    if not module.is_discrete:
        return ModulePass(module, cache, out, parent_widths=tuple(widths))
    if gumbel is None:
        gumbel = np.zeros_like(out)
    z = out + gumbel
    if relaxed:
        probs = softmax(z / bundle.temperature)
        return ModulePass(module, cache, probs, probs, True, tuple(widths))
    hard = np.zeros_like(out)
    hard[np.arange(n), np.argmax(z, axis=1)] = 1.0
    return ModulePass(module, cache, hard, None, False, tuple(widths))


def module_backward(bundle, mp: ModulePass, grad_value):
    """Back-propagate d loss / d value.  Returns ``(param_grads, parent_grads, theta_grad)``."""
    module = mp.module
    g = np.asarray(grad_value, dtype=float)
    if module.is_discrete:
        if not mp.relaxed:
            raise DataError("hard label samples are not differentiable")
        p = mp.probs
        g = p * (g - (g * p).sum(axis=1, keepdims=True)) / bundle.temperature
    grads, gin = backward(module.mlp, mp.cache, g)
    parent_grads = {}
    k = 0
    for p, w in zip(module.parent_nodes, mp.parent_widths):
        parent_grads[p] = gin[:, k:k + w]
        k += w
    k += module.noise_dim
    theta_grad = gin[:, k:k + module.theta_dim].sum(axis=0) if module.theta_dim else None
    return grads, parent_grads, theta_grad


# ---------------------------------------------------------------- sampling

@dataclass
class BundleDraws:
    """Noise for one bundle pass: per-module noise and label Gumbel noise."""

    noise: dict
    gumbel: np.ndarray | None


def draw_noise(bundle, n, rng) -> BundleDraws:
    noise, gumbel = {}, None
    for m in bundle.modules:
        noise[m.node] = rng.normal(size=(n, m.noise_dim))
        if m.is_discrete:
            gumbel = rng.gumbel(size=(n, bundle.n_classes))
    return BundleDraws(noise, gumbel)


def _theta_for(bundle, module, theta):
    if module.theta_index is None:
        return None
    if theta is None or len(theta) <= module.theta_index:
        raise DataError(f"no theta value for node {bundle.dag.nodes[module.node].name}")
    return theta[module.theta_index]


def _conditioning_values(bundle, conditioning, n):
    vals = {}
    if not bundle.conditioning:
        return vals
    if conditioning is None:
        raise DataError("bundle needs conditioning features for "
                        + ", ".join(bundle.dag.nodes[c].name for c in bundle.conditioning))
    conditioning = np.asarray(conditioning, dtype=float)
    if conditioning.shape[0] != n:
        raise DataError(f"conditioning has {conditioning.shape[0]} rows, expected {n}")
    for c in bundle.conditioning:
        cols = bundle.node_columns(c)
        if max(cols) >= conditioning.shape[1]:
            raise DataError(f"conditioning is missing columns of {bundle.dag.nodes[c].name}")
        vals[c] = conditioning[:, cols]
    return vals


def run_bundle(bundle, theta, conditioning, draws: BundleDraws, relaxed=True):
    """Ancestral pass through every module.  Returns ``(values, passes)``."""
    n = next(iter(draws.noise.values())).shape[0]
    values = _conditioning_values(bundle, conditioning, n)
    passes = {}
    for m in bundle.modules:
        th = _theta_for(bundle, m, theta)
        mp = module_forward(bundle, m, values, draws.noise[m.node], th,
                            draws.gumbel if m.is_discrete else None, relaxed)
        passes[m.node] = mp
        values[m.node] = mp.value
    return values, passes


def backward_bundle(bundle, passes, value_grads):
    """Reverse pass of :func:`run_bundle`.

    ``value_grads`` maps node -> d loss / d value.  Returns
    ``(param_grads in bundle.params order, theta_grad [n_theta])``.
    """
    acc = {k: np.array(v, dtype=float) for k, v in value_grads.items()}
    theta_grad = np.zeros(bundle.n_theta)
    per_module = {}
    for m in reversed(bundle.modules):
        mp = passes[m.node]
        g = acc.get(m.node)
        if g is None:
            per_module[m.node] = [np.zeros_like(p) for p in m.mlp.params]
            continue
        grads, parent_grads, tg = module_backward(bundle, mp, g)
        per_module[m.node] = grads
        if tg is not None:
            theta_grad[m.theta_index] += tg.sum()
        for p, pg in parent_grads.items():
            if p in passes:
                acc[p] = acc[p] + pg if p in acc else pg
    out = []
    for m in bundle.modules:
        out.extend(per_module[m.node])
    return out, theta_grad


def sample_domain(bundle: GeneratorBundle, theta, conditioning=None, n=None, seed=0):
    """Draw ``n`` labelled rows sharing one theta assignment.

    ``conditioning`` holds observed values for the bundle's conditioning nodes
    as a full-width feature matrix with ``n`` rows.  Returns
    ``(features [n, d], labels [n])`` where columns neither generated nor
    conditioned on are NaN.
    """
    if n is None:
        n = 0 if conditioning is None else np.asarray(conditioning).shape[0]
    if n < 1:
        raise DataError("sample size must be >= 1")
    theta = None if theta is None else np.atleast_1d(np.asarray(theta, dtype=float))
    if bundle.n_theta and (theta is None or theta.shape[0] < bundle.n_theta):
        raise DataError(f"theta assignment needs {bundle.n_theta} entries")
    rng = np.random.Generator(np.random.Philox(seed))
    draws = draw_noise(bundle, n, rng)
    values, _ = run_bundle(bundle, theta, conditioning, draws, relaxed=False)
    d = len(bundle.dag.feature_names or []) or 1 + max(
        c for nd in bundle.dag.nodes for c in nd.features)
    x = np.full((n, d), np.nan)
    for node, v in values.items():
        if node == bundle.label:
            continue
        x[:, bundle.node_columns(node)] = v
    labels = np.argmax(values[bundle.label], axis=1)
    return x, labels


def label_probabilities(bundle, theta, conditioning=None, n=1):
    """Softmax of the label module for a fixed noise value of zero (diagnostic)."""
    m = bundle.module_for(bundle.label)
    values = _conditioning_values(bundle, conditioning, n)
    out, _ = forward(m.mlp, np.hstack(
        [values[p] for p in m.parent_nodes] + [np.zeros((n, m.noise_dim))]
        + ([np.full((n, m.theta_dim), theta[m.theta_index])] if m.theta_dim else [])))
    return softmax(out)


# ------------------------------------------------------------- checkpoints

def save_bundle(stem, bundle: GeneratorBundle, extra=None):
    arrays = {}
    meta = []
    for m in bundle.modules:
        arrays.update(mlp_arrays(m.mlp, prefix=f"m{m.node}_"))
        meta.append({"node": m.node, "parents": m.parent_nodes, "layer_sizes": m.mlp.layer_sizes,
                     "activation": m.mlp.activation, "noise_dim": m.noise_dim,
                     "theta_dim": m.theta_dim, "output_kind": m.output_kind,
                     "theta_index": m.theta_index})
    info = {"dag": bundle.dag.to_dict(), "modules": meta, "theta_groups": bundle.theta_groups,
            "conditioning": bundle.conditioning, "temperature": bundle.temperature,
            "bandwidths": {str(k): v for k, v in sorted(bundle.bandwidths.items(), key=lambda kv: str(kv[0]))}}
    info.update(extra or {})
    return save_checkpoint(stem, arrays, info)


def load_bundle(stem):
    arrays, info = load_checkpoint(stem)
    dag = AugmentedDag.from_dict(info["dag"])
    modules = []
    for mm in info["modules"]:
        mlp = mlp_from_arrays(arrays, mm["layer_sizes"], mm["activation"], prefix=f"m{mm['node']}_")
        modules.append(GeneratorModule(mm["node"], list(mm["parents"]), mlp, mm["noise_dim"],
                                       mm["theta_dim"], mm["output_kind"], mm["theta_index"]))
    bw = {k if not k.lstrip("-").isdigit() else int(k): v for k, v in info.get("bandwidths", {}).items()}
    bundle = GeneratorBundle(dag, modules, info["theta_groups"], info["conditioning"],
                             info["temperature"], bw)
    return bundle, info

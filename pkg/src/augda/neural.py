"""Small multilayer perceptrons with hand-written reverse-mode gradients and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so that a layer computes
``x @ W + b`` on a row-major batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from augda.errors import DataError, NonFiniteGradientError, StaleCacheError

ACTIVATIONS = ("tanh", "relu")


def _act(name, a):
    if name == "tanh":
        return np.tanh(a)
    return np.maximum(a, 0.0)


def _act_grad(name, a, h):
    # derivative expressed through pre-activation a and activation h
    if name == "tanh":
        return 1.0 - h * h
    return (a > 0).astype(a.dtype)


@dataclass(eq=False)
class Mlp:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    version: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.layer_sizes) < 2 or any(s < 0 for s in self.layer_sizes):
            raise ValueError(f"invalid layer sizes {self.layer_sizes}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("parameter count does not match layer_sizes")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[k], self.layer_sizes[k + 1])
            if w.shape != expect or b.shape != (expect[1],):
                raise ValueError(f"layer {k}: got {w.shape}/{b.shape}, expected {expect}")

    @classmethod
    def init(cls, layer_sizes, rng, activation="tanh", scale="fan_in"):
        """Random network.

        ``scale="fan_in"`` draws weights from N(0, 1/fan_in) with zero biases;
        ``scale="unit"`` draws every weight and bias from N(0, 1).
        """
        layer_sizes = [int(s) for s in layer_sizes]
        weights, biases = [], []
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            if scale == "fan_in":
                std = 1.0 / np.sqrt(max(n_in, 1))
                weights.append(rng.normal(0.0, std, size=(n_in, n_out)))
                biases.append(np.zeros(n_out))
            elif scale == "unit":
                weights.append(rng.normal(size=(n_in, n_out)))
                biases.append(rng.normal(size=n_out))
            else:
                raise ValueError(f"unknown init scale {scale!r}")
        return cls(layer_sizes, weights, biases, activation)

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_params(self, params):
        params = list(params)
        if len(params) != 2 * self.n_layers:
            raise ValueError("wrong number of parameter arrays")
        self.weights = [np.array(p, dtype=float) for p in params[0::2]]
        self.biases = [np.array(p, dtype=float) for p in params[1::2]]
        self.version += 1

    def copy(self):
        return Mlp(list(self.layer_sizes), [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.activation)

    def __call__(self, x):
        return forward(self, x)[0]


@dataclass(frozen=True)
class ForwardCache:
    owner_id: int
    version: int
    inputs: tuple  # input to each layer
    pre: tuple  # pre-activation of each hidden layer
    post: tuple  # activation of each hidden layer


def forward(mlp: Mlp, x):
    """Run the network on a batch and return ``(output, cache)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != mlp.layer_sizes[0]:
        raise DataError(f"input shape {x.shape} does not match width {mlp.layer_sizes[0]}")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite network input")
    inputs, pre, post = [], [], []
    h = x
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        inputs.append(h)
        a = h @ w + b
        if k < mlp.n_layers - 1:
            h = _act(mlp.activation, a)
            pre.append(a)
            post.append(h)
        else:
            h = a
    cache = ForwardCache(id(mlp), mlp.version, tuple(inputs), tuple(pre), tuple(post))
    return h, cache


def backward(mlp: Mlp, cache: ForwardCache, grad_out):
    """Back-propagate ``grad_out`` (dL/d output) through the cached forward pass.

    Returns ``(param_grads, grad_input)`` with ``param_grads`` ordered like
    :attr:`Mlp.params`.
    """
    if cache.owner_id != id(mlp) or cache.version != mlp.version:
        raise StaleCacheError("forward cache does not belong to the current parameters")
    g = np.asarray(grad_out, dtype=float)
    grads = [None] * (2 * mlp.n_layers)
    for k in range(mlp.n_layers - 1, -1, -1):
        if k < mlp.n_layers - 1:
            g = g * _act_grad(mlp.activation, cache.pre[k], cache.post[k])
        grads[2 * k] = cache.inputs[k].T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ mlp.weights[k].T
    return grads, g


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, **kw):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                    learning_rate=learning_rate, **kw)

    def copy(self):
        return AdamState([m.copy() for m in self.m], [v.copy() for v in self.v], self.step,
                         self.learning_rate, self.beta1, self.beta2, self.eps)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update.

    Pure: returns ``(new_params, new_state)`` and leaves the inputs untouched.
    Raises :class:`NonFiniteGradientError` without updating anything if any
    gradient entry is NaN or infinite.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(p)}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("refusing Adam step on non-finite gradient")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, t, state.learning_rate, b1, b2, state.eps)
    return new_params, new_state


# checkpoint format: <stem>.bin holds little-endian float64 values back to back,
# <stem>.json lists each array's name, shape and offset (in elements)

def save_checkpoint(stem, arrays: dict, extra: dict | None = None):
    stem = Path(stem)
    manifest = {"dtype": "<f8", "arrays": [], "extra": extra or {}}
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        manifest["arrays"].append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.ravel())
    flat = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    stem.with_suffix(".bin").write_bytes(flat.astype("<f8").tobytes())
    stem.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def load_checkpoint(stem):
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    flat = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    out = {}
    for entry in manifest["arrays"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        out[entry["name"]] = flat[entry["offset"]:entry["offset"] + size].reshape(entry["shape"]).copy()
    return out, manifest.get("extra", {})


def mlp_arrays(mlp: Mlp, prefix=""):
    return {f"{prefix}p{k}": p for k, p in enumerate(mlp.params)}


def mlp_from_arrays(arrays, layer_sizes, activation, prefix=""):
    params = [arrays[f"{prefix}p{k}"] for k in range(2 * (len(layer_sizes) - 1))]
    return Mlp(list(layer_sizes), params[0::2], params[1::2], activation)

"""One-hidden-layer softmax classifier trained with full-batch Adam."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from augda.neural import AdamState, Mlp, adam_step, backward, forward


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class SoftmaxClassifier:
    mlp: Mlp | None
    n_classes: int
    prior: np.ndarray | None = None  # used when there are no input features

    def predict_proba(self, x):
        x = np.asarray(x, dtype=float)
        if self.mlp is None:
            return np.tile(self.prior, (x.shape[0], 1))
        return softmax(forward(self.mlp, x)[0])

    def predict(self, x):
        return np.argmax(self.predict_proba(x), axis=1)


def fit_classifier(x, y, n_classes, *, hidden=32, steps=500, learning_rate=1e-2, seed=0,
                   activation="tanh"):
    """Fit a softmax classifier by minimising mean cross-entropy.

    Deterministic given ``seed``.  With zero feature columns the classifier
    returns the (add-one smoothed) empirical label distribution.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if x.shape[1] == 0:
        counts = np.bincount(y, minlength=n_classes) + 1.0
        return SoftmaxClassifier(None, n_classes, counts / counts.sum())
    rng = np.random.Generator(np.random.Philox(seed))
    mlp = Mlp.init([x.shape[1], hidden, n_classes], rng, activation)
    target = np.zeros((len(y), n_classes))
    target[np.arange(len(y)), y] = 1.0
    params = mlp.params
    state = AdamState.for_params(params, learning_rate)
    for _ in range(steps):
        logits, cache = forward(mlp, x)
        grad_logits = (softmax(logits) - target) / len(y)
        grads, _ = backward(mlp, cache, grad_logits)
        params, state = adam_step(state, params, grads)
        mlp.set_params(params)
    return SoftmaxClassifier(mlp, n_classes)

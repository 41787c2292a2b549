"""
Dense ReLU network with a two-way softmax head, written directly in numpy.

Everything runs in float64 so that input gradients can be checked against
finite differences at tight tolerances. Forward and gradient methods accept
either one sample (shape ``(D,)``) or a batch (shape ``(B, D)``); batched
calls are what the attack campaigns use.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class MlpConfig:
    layer_sizes: tuple[int, ...]
    learning_rate: float = 0.05
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ModelError("layer_sizes needs at least an input and an output size")
        if any(s <= 0 for s in self.layer_sizes):
            raise ModelError(f"layer sizes must be positive, got {self.layer_sizes}")
        if self.layer_sizes[-1] != 2:
            raise ModelError("the output layer must have exactly 2 units")
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ModelError("learning_rate and batch_size must be positive, epochs nonnegative")

    @classmethod
    def default(cls, n_features: int, **kwargs) -> "MlpConfig":
        return cls(layer_sizes=(n_features, 64, 32, 2), **kwargs)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    return (x[None, :] if single else x), single


class Mlp:
    """Weights are stored as ``(fan_in, fan_out)`` matrices, applied as ``x @ W + b``."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray], config: MlpConfig):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.config = config
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (config.layer_sizes[k], config.layer_sizes[k + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise ModelError(f"layer {k}: weight {w.shape} / bias {b.shape} do not match {expected}")

    @property
    def n_features(self) -> int:
        return self.config.layer_sizes[0]

    @property
    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.config)

    def _check_input(self, X: np.ndarray) -> None:
        if X.shape[-1] != self.n_features:
            raise ModelError(f"expected {self.n_features} features, got {X.shape[-1]}")
        if not np.isfinite(X).all():
            raise ModelError("input contains non-finite values")

    def _forward(self, X: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Layer inputs and pre-activations, kept for backpropagation."""
        inputs, pre = [], []
        a = X
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            z = a @ w + b
            pre.append(z)
            a = np.maximum(z, 0.0) if k < last else z
        return inputs, pre

    def _backward(self, inputs, pre, upstream: np.ndarray, want_params: bool = False):
        """Push ``dL/dlogits`` back to the input (and optionally the parameters).

        The ReLU derivative at exactly zero is taken as 0.
        """
        g = upstream
        grads_w, grads_b = [], []
        for k in range(len(self.weights) - 1, -1, -1):
            if want_params:
                grads_w.append(inputs[k].T @ g)
                grads_b.append(g.sum(axis=0))
            g = g @ self.weights[k].T
            if k > 0:
                g = g * (pre[k - 1] > 0.0)
        if want_params:
            return g, grads_w[::-1], grads_b[::-1]
        return g

    def logits(self, x) -> np.ndarray:
        X, single = _as_batch(x)
        self._check_input(X)
        z = self._forward(X)[1][-1]
        return z[0] if single else z

    def forward(self, x) -> np.ndarray:
        """Class probabilities ``(p0, p1)``."""
        return _softmax(self.logits(x))

    def predict(self, x):
        z = self.logits(x)
        # ties go to label 0
        labels = (z[..., 1] > z[..., 0]).astype(np.int64)
        return int(labels) if labels.ndim == 0 else labels

    def loss(self, x, t) -> np.ndarray | float:
        """Cross-entropy ``-log p_t`` per sample."""
        X, single = _as_batch(x)
        z = self.logits(X)
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), (len(z),))
        m = z.max(axis=1)
        lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
        out = lse - z[np.arange(len(z)), t]
        return float(out[0]) if single else out

    def input_gradient(self, x, t) -> np.ndarray:
        """Gradient of the cross-entropy toward class ``t`` with respect to ``x``."""
        X, single = _as_batch(x)
        self._check_input(X)
        g = self._loss_gradient_and_logits(X, t)[0]
        return g[0] if single else g

    def _loss_gradient_and_logits(self, X: np.ndarray, t):
        """Batch-only: input gradient of the cross-entropy plus the logits it was computed at."""
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), (X.shape[0],))
        inputs, pre = self._forward(X)
        upstream = _softmax(pre[-1])
        upstream[np.arange(X.shape[0]), t] -= 1.0
        return self._backward(inputs, pre, upstream), pre[-1]

    def logit_margin_gradient(self, x, s, t):
        """``logit_t - logit_s`` and its input gradient."""
        X, single = _as_batch(x)
        self._check_input(X)
        n = X.shape[0]
        s = np.broadcast_to(np.asarray(s, dtype=np.int64), (n,))
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
        if np.any(s == t):
            raise ModelError("source and target labels must differ")
        inputs, pre = self._forward(X)
        z = pre[-1]
        rows = np.arange(n)
        margin = z[rows, t] - z[rows, s]
        upstream = np.zeros_like(z)
        upstream[rows, t] = 1.0
        upstream[rows, s] = -1.0
        g = self._backward(inputs, pre, upstream)
        if single:
            return float(margin[0]), g[0]
        return margin, g

    def save(self, path: str | Path) -> None:
        arrays = {f"W{k}": w for k, w in enumerate(self.weights)}
        arrays.update({f"b{k}": b for k, b in enumerate(self.biases)})
        meta = {"format_version": FORMAT_VERSION, "config": asdict(self.config)}
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "Mlp":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("format_version") != FORMAT_VERSION:
                raise ModelError(f"{path}: unsupported model format {meta.get('format_version')}")
            config = MlpConfig(**meta["config"])
            n_layers = len(config.layer_sizes) - 1
            weights = [data[f"W{k}"] for k in range(n_layers)]
            biases = [data[f"b{k}"] for k in range(n_layers)]
        return cls(weights, biases, config)


def init(config: MlpConfig) -> Mlp:
    """He-uniform weights drawn from ``config.seed``; zero biases."""
    rng = np.random.default_rng([config.seed, 0])
    weights, biases = [], []
    for fan_in, fan_out in zip(config.layer_sizes[:-1], config.layer_sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases, config)


@dataclass
class TrainResult:
    model: Mlp
    initial_loss: float
    history: list[float] = field(default_factory=list)
    accuracy: float = 0.0

    @property
    def final_loss(self) -> float:
        return self.history[-1] if self.history else self.initial_loss


def train(mlp: Mlp, X: np.ndarray, y: np.ndarray, config: MlpConfig | None = None) -> TrainResult:
    """Mini-batch gradient descent on mean cross-entropy.

    Returns a trained copy; ``mlp`` itself is left untouched. The shuffle
    order comes from ``config.seed`` so reruns are bit-identical. ``history``
    holds the full-training-set loss after each epoch.
    """
    config = config or mlp.config
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ModelError("training set is empty")
    if len(np.unique(y)) < 2:
        raise ModelError("training set must contain both classes")
    model = mlp.copy()
    rng = np.random.default_rng([config.seed, 1])
    n = len(X)
    initial = float(np.mean(model.loss(X, y)))
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = X[idx], y[idx]
            inputs, pre = model._forward(xb)
            upstream = _softmax(pre[-1])
            upstream[np.arange(len(idx)), yb] -= 1.0
            upstream /= len(idx)
            _, gw, gb = model._backward(inputs, pre, upstream, want_params=True)
            for k in range(len(model.weights)):
                model.weights[k] -= config.learning_rate * gw[k]
                model.biases[k] -= config.learning_rate * gb[k]
        history.append(float(np.mean(model.loss(X, y))))
    if not all(np.isfinite(w).all() for w in model.weights + model.biases):
        raise ModelError("training diverged: non-finite parameters")
    accuracy = float(np.mean(model.predict(X) == y))
    return TrainResult(model, initial, history, accuracy)


# Functional aliases mirroring the method names.

def forward(mlp: Mlp, x) -> np.ndarray:
    return mlp.forward(x)


def predict(mlp: Mlp, x):
    return mlp.predict(x)


def input_gradient(mlp: Mlp, x, t) -> np.ndarray:
    return mlp.input_gradient(x, t)


def logit_margin_gradient(mlp: Mlp, x, s, t):
    return mlp.logit_margin_gradient(x, s, t)

"""Small fully-connected network engine with hand-written backpropagation.

Layers act on row-major batches: an input of shape ``(count, in_dim)`` maps to
``(count, out_dim)``. A 1-D input is treated as a batch of one and the
result is returned 1-D again.

Softmax is only allowed as the final transform of a classification stack.
For such a layer :func:`backward` expects the gradient with respect to the
layer's logits, which is what :func:`cross_entropy_loss` returns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTIVATIONS = ("identity", "tanh", "softmax")


@dataclass(frozen=True)
class DenseLayer:
    """Affine map followed by an elementwise (or softmax) activation."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.biases, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"biases shape {b.shape} does not match {w.shape[0]} outputs")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


def dense_layer(in_dim: int, out_dim: int, rng: np.random.Generator,
                activation: str = "identity") -> DenseLayer:
    """Glorot-uniform weights, zero biases."""
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    w = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    return DenseLayer(w, np.zeros(out_dim), activation)


def check_chain(layers: Sequence[DenseLayer]) -> None:
    for i, (prev, nxt) in enumerate(zip(layers[:-1], layers[1:])):
        if prev.out_dim != nxt.in_dim:
            raise ValueError(
                f"layer {i} outputs {prev.out_dim} values but layer {i + 1} expects {nxt.in_dim}")
    for i, layer in enumerate(layers[:-1]):
        if layer.activation == "softmax":
            raise ValueError(f"softmax is only allowed on the final layer (found at layer {i})")


@dataclass
class Trace:
    """Activations recorded by :func:`forward`.

    ``pre[i]`` is layer ``i``'s affine output and ``post[i]`` its activation;
    ``inputs`` is the batch fed to the first layer.
    """

    inputs: np.ndarray
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    squeeze: bool = False

    @property
    def output(self) -> np.ndarray:
        out = self.post[-1] if self.post else self.inputs
        return out[0] if self.squeeze else out


@dataclass
class Gradients:
    """Per-layer ``(weights, biases)`` gradients plus the gradient w.r.t. the input batch."""

    layers: list
    inputs: np.ndarray

    def flat(self) -> list:
        return [g for pair in self.layers for g in pair]


def softmax(v) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    v = np.asarray(v, dtype=np.float64)
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(pre)
    if activation == "softmax":
        return softmax(pre)
    return pre


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ValueError(f"input must be 1-D or 2-D, got shape {x.shape}")
    return x, False


def forward(layers: Sequence[DenseLayer], x) -> Trace:
    """Run ``x`` through ``layers``, keeping everything backprop needs."""
    batch, squeeze = _as_batch(x)
    if layers and batch.shape[1] != layers[0].in_dim:
        raise ValueError(f"input has {batch.shape[1]} features, first layer expects {layers[0].in_dim}")
    trace = Trace(inputs=batch, squeeze=squeeze)
    h = batch
    for layer in layers:
        pre = h @ layer.weights.T + layer.biases
        h = _activate(pre, layer.activation)
        trace.pre.append(pre)
        trace.post.append(h)
    return trace


def backward(layers: Sequence[DenseLayer], trace: Trace, output_gradient) -> Gradients:
    """Gradients of a scalar loss given ``dL/d(output)`` of the trace."""
    if len(trace.pre) != len(layers):
        raise ValueError("trace does not belong to these layers")
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    expected = trace.post[-1].shape if layers else trace.inputs.shape
    if g.shape != expected:
        raise ValueError(f"output gradient shape {g.shape} does not match trace output {expected}")
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        if layer.weights.shape[0] != trace.pre[i].shape[1]:
            raise ValueError(f"stale trace: layer {i} shape changed since forward")
        if layer.activation == "tanh":
            g = g * (1.0 - trace.post[i] ** 2)
        # softmax: g is already w.r.t. the logits
        h_in = trace.post[i - 1] if i > 0 else trace.inputs
        if h_in.shape[1] != layer.in_dim:
            raise ValueError(f"stale trace: layer {i} input width changed since forward")
        grads[i] = (g.T @ h_in, g.sum(axis=0))
        g = g @ layer.weights
    return Gradients(layers=grads, inputs=g)


def mse_loss(predictions, targets) -> tuple[float, np.ndarray]:
    """Mean over samples of the squared Euclidean error, and its gradient."""
    p, _ = _as_batch(predictions)
    s, _ = _as_batch(targets)
    if p.shape != s.shape:
        raise ValueError(f"prediction shape {p.shape} does not match targets {s.shape}")
    t = p.shape[0]
    if t == 0:
        raise ValueError("empty batch")
    diff = p - s
    loss = float(np.sum(diff * diff) / t)
    return loss, 2.0 * diff / t


def cross_entropy_loss(probabilities, target_indices) -> tuple[float, np.ndarray]:
    """Mean negative log-probability of the targets.

    The returned gradient is taken with respect to the softmax logits,
    ``(p - onehot) / t``.
    """
    p, _ = _as_batch(probabilities)
    idx = np.atleast_1d(np.asarray(target_indices))
    t = p.shape[0]
    if t == 0:
        raise ValueError("empty batch")
    if idx.shape != (t,):
        raise ValueError(f"need one target index per row, got {idx.shape} for {t} rows")
    if np.any(idx < 0) or np.any(idx >= p.shape[1]):
        raise ValueError("target index out of range")
    picked = p[np.arange(t), idx]
    if np.any(picked <= 0.0):
        raise ValueError("zero probability assigned to a target class")
    loss = float(-np.sum(np.log(picked)) / t)
    grad = p.copy()
    grad[np.arange(t), idx] -= 1.0
    return loss, grad / t


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             learning_rate: float) -> list[np.ndarray]:
    """Return ``p - lr * g`` for each parameter array (inputs are not modified)."""
    if learning_rate < 0:
        raise ValueError("learning rate must be non-negative")
    if len(params) != len(grads):
        raise ValueError("parameter and gradient lists differ in length")
    out = []
    for p, g in zip(params, grads):
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        out.append(p - learning_rate * g)
    return out


def layer_params(layers: Sequence[DenseLayer]) -> list[np.ndarray]:
    return [arr for layer in layers for arr in (layer.weights, layer.biases)]


def with_params(layers: Sequence[DenseLayer], params: Sequence[np.ndarray]) -> list[DenseLayer]:
    if len(params) != 2 * len(layers):
        raise ValueError("wrong number of parameter arrays")
    return [DenseLayer(params[2 * i], params[2 * i + 1], layer.activation)
            for i, layer in enumerate(layers)]

"""Softmax regression and a one-hidden-layer ReLU network with per-record gradients.

Parameters are stored flat. Each layer is a row-major matrix of shape
(fan_out, fan_in + 1) whose last column is the bias, so logistic regression
has (d_in + 1) * L parameters and the MLP has (d_in + 1) * h + (h + 1) * L.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RngStream, gaussian_vector
from .data import Dataset

KINDS = ("logistic_regression", "mlp")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    d_in: int
    n_classes: int
    hidden: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.d_in < 1 or self.n_classes < 2:
            raise ValueError("need d_in >= 1 and at least two classes")
        if self.kind == "mlp" and self.hidden < 1:
            raise ValueError("mlp needs a positive hidden width")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        if self.kind == "logistic_regression":
            return [(self.n_classes, self.d_in + 1)]
        return [(self.hidden, self.d_in + 1), (self.n_classes, self.hidden + 1)]

    @property
    def n_params(self) -> int:
        return sum(r * c for r, c in self.layer_shapes)


def _layers(theta: np.ndarray, spec: ModelSpec) -> list[np.ndarray]:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.n_params,):
        raise ValueError(f"expected {spec.n_params} parameters, got shape {theta.shape}")
    out, offset = [], 0
    for rows, cols in spec.layer_shapes:
        out.append(theta[offset : offset + rows * cols].reshape(rows, cols))
        offset += rows * cols
    return out


def init_model(spec: ModelSpec, stream: RngStream) -> np.ndarray:
    """Gaussian weights with std 1/sqrt(fan_in) per layer; zero biases."""
    parts = []
    for k, (rows, cols) in enumerate(spec.layer_shapes):
        fan_in = cols - 1
        w = gaussian_vector(stream.derive(f"layer/{k}"), rows * fan_in, 1.0 / math.sqrt(fan_in))
        layer = np.zeros((rows, cols))
        layer[:, :-1] = w.reshape(rows, fan_in)
        parts.append(layer.ravel())
    return np.concatenate(parts)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _with_bias(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _forward(theta: np.ndarray, features: np.ndarray, spec: ModelSpec):
    layers = _layers(theta, spec)
    x1 = _with_bias(np.atleast_2d(features))
    if spec.kind == "logistic_regression":
        return x1 @ layers[0].T, (x1,)
    pre = x1 @ layers[0].T
    h1 = _with_bias(np.maximum(pre, 0.0))
    return h1 @ layers[1].T, (x1, pre, h1, layers[1])


def logits(theta: np.ndarray, features: np.ndarray, spec: ModelSpec) -> np.ndarray:
    return _forward(theta, features, spec)[0]


def per_record_losses(theta: np.ndarray, features: np.ndarray, labels: np.ndarray, spec: ModelSpec) -> np.ndarray:
    logp = _log_softmax(logits(theta, features, spec))
    return -logp[np.arange(len(labels)), labels]


def per_record_grads(theta: np.ndarray, features: np.ndarray, labels: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Cross-entropy gradient of every record, one row per record."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if n == 0:
        return np.zeros((0, spec.n_params))
    out, cache = _forward(theta, features, spec)
    delta = np.exp(_log_softmax(out))
    delta[np.arange(n), labels] -= 1.0
    if spec.kind == "logistic_regression":
        (x1,) = cache
        return (delta[:, :, None] * x1[:, None, :]).reshape(n, -1)
    x1, pre, h1, w2 = cache
    g2 = delta[:, :, None] * h1[:, None, :]
    # ReLU subgradient at exactly 0 is taken as 0
    dh = (delta @ w2[:, :-1]) * (pre > 0)
    g1 = dh[:, :, None] * x1[:, None, :]
    return np.hstack([g1.reshape(n, -1), g2.reshape(n, -1)])


def per_record_grad(theta: np.ndarray, features: np.ndarray, label: int, spec: ModelSpec) -> np.ndarray:
    return per_record_grads(theta, np.atleast_2d(features), np.array([label]), spec)[0]


def mean_loss_grad(theta: np.ndarray, d: Dataset, spec: ModelSpec) -> np.ndarray:
    """Gradient of the mean loss, accumulated by matrix products rather than per record."""
    if len(d) == 0:
        raise ValueError("empty dataset")
    n = len(d)
    out, cache = _forward(theta, d.features, spec)
    delta = np.exp(_log_softmax(out))
    delta[np.arange(n), d.labels] -= 1.0
    delta /= n
    if spec.kind == "logistic_regression":
        return (delta.T @ cache[0]).ravel()
    x1, pre, h1, w2 = cache
    dh = (delta @ w2[:, :-1]) * (pre > 0)
    return np.concatenate([(dh.T @ x1).ravel(), (delta.T @ h1).ravel()])


def loss(theta: np.ndarray, d: Dataset, spec: ModelSpec) -> float:
    if len(d) == 0:
        raise ValueError("empty dataset")
    return math.fsum(per_record_losses(theta, d.features, d.labels, spec)) / len(d)


def predict(theta: np.ndarray, features: np.ndarray, spec: ModelSpec) -> np.ndarray:
    # argmax returns the first maximum, i.e. ties go to the smallest class index
    return np.argmax(logits(theta, features, spec), axis=1)


def accuracy(theta: np.ndarray, d: Dataset, spec: ModelSpec) -> float:
    if len(d) == 0:
        raise ValueError("empty dataset")
    return float(np.mean(predict(theta, d.features, spec) == d.labels))


def fd_gradient_oracle(theta: np.ndarray, features: np.ndarray, label: int, spec: ModelSpec, h: float = 1e-5) -> np.ndarray:
    """Central differences of the single-record loss, one coordinate at a time."""
    if not h > 0:
        raise ValueError("step must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    x = np.atleast_2d(features)
    y = np.array([label])
    grad = np.empty_like(theta)
    for k in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[k] += h
        down[k] -= h
        grad[k] = (per_record_losses(up, x, y, spec)[0] - per_record_losses(down, x, y, spec)[0]) / (2 * h)
    return grad

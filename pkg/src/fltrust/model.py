"""Softmax classifiers on flat parameter vectors, plus local SGD.

Parameters are stored as one float64 vector. For logistic regression the
layout is a row-major ``(input_dim + 1, num_classes)`` matrix whose last row
is the bias. The MLP stores the hidden layer the same way, followed by the
output layer ``(hidden_dim + 1, num_classes)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigError, NumericError

if TYPE_CHECKING:
    from .data import Dataset

LOGISTIC = "lr"
MLP = "mlp"


@dataclass(frozen=True)
class ModelSpec:
    kind: str = LOGISTIC
    input_dim: int = 32
    num_classes: int = 10
    hidden_dim: int = 0

    def __post_init__(self):
        if self.kind not in (LOGISTIC, MLP):
            raise ConfigError(f"model.kind: unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise ConfigError("model.input_dim must be positive")
        if self.num_classes < 2:
            raise ConfigError("model.num_classes must be at least 2")
        if self.kind == MLP and self.hidden_dim < 1:
            raise ConfigError("model.hidden_dim must be positive for an MLP")

    @property
    def num_params(self) -> int:
        return parameter_count(self)


def parameter_count(spec: ModelSpec) -> int:
    if spec.kind == LOGISTIC:
        return (spec.input_dim + 1) * spec.num_classes
    return (spec.input_dim + 1) * spec.hidden_dim + (spec.hidden_dim + 1) * spec.num_classes


def init_params(spec: ModelSpec, rng: np.random.Generator, scale: float = 0.01) -> np.ndarray:
    return scale * rng.standard_normal(parameter_count(spec))


def _unpack(spec: ModelSpec, params: np.ndarray):
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.size != parameter_count(spec):
        raise ConfigError(
            f"parameter vector has shape {params.shape}, expected ({parameter_count(spec)},)"
        )
    d, m = spec.input_dim, spec.num_classes
    if spec.kind == LOGISTIC:
        return (params.reshape(d + 1, m),)
    h = spec.hidden_dim
    split = (d + 1) * h
    return params[:split].reshape(d + 1, h), params[split:].reshape(h + 1, m)


def _as_features(spec: ModelSpec, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ConfigError(f"features have shape {X.shape}, expected (*, {spec.input_dim})")
    return X


def _forward(spec: ModelSpec, params: np.ndarray, X: np.ndarray):
    """Return logits and the cached hidden activations (None for LR)."""
    layers = _unpack(spec, params)
    if spec.kind == LOGISTIC:
        (W,) = layers
        return X @ W[:-1] + W[-1], None
    W1, W2 = layers
    hidden = np.maximum(X @ W1[:-1] + W1[-1], 0.0)
    return hidden @ W2[:-1] + W2[-1], hidden


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict(spec: ModelSpec, params: np.ndarray, features) -> np.ndarray:
    """Class probabilities; a single feature vector gives a 1-D result."""
    single = np.ndim(features) == 1
    logits, _ = _forward(spec, params, _as_features(spec, features))
    probs = _softmax(logits)
    return probs[0] if single else probs


def predict_labels(spec: ModelSpec, params: np.ndarray, features) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    logits, _ = _forward(spec, params, _as_features(spec, features))
    return np.argmax(logits, axis=1)


def _check_batch(spec: ModelSpec, X, y):
    X = _as_features(spec, X)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ConfigError("batch is empty")
    if y.shape != (len(X),):
        raise ConfigError("features and labels differ in length")
    if y.min() < 0 or y.max() >= spec.num_classes:
        raise ConfigError("label out of range")
    return X, y


def loss(spec: ModelSpec, params: np.ndarray, X, y) -> float:
    """Mean cross-entropy of the batch ``(X, y)``."""
    X, y = _check_batch(spec, X, y)
    logits, _ = _forward(spec, params, X)
    shift = logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(logits - shift).sum(axis=1)) + shift[:, 0]
    value = float(np.mean(log_norm - logits[np.arange(len(y)), y]))
    if not np.isfinite(value):
        raise NumericError("non-finite loss")
    return value


def gradient(spec: ModelSpec, params: np.ndarray, X, y) -> np.ndarray:
    """Analytic gradient of :func:`loss` with respect to the flat parameters."""
    X, y = _check_batch(spec, X, y)
    logits, hidden = _forward(spec, params, X)
    delta = _softmax(logits)
    delta[np.arange(len(y)), y] -= 1.0
    delta /= len(y)

    if spec.kind == LOGISTIC:
        grad = np.vstack([X.T @ delta, delta.sum(axis=0)]).ravel()
    else:
        _, W2 = _unpack(spec, params)
        grad_out = np.vstack([hidden.T @ delta, delta.sum(axis=0)])
        back = (delta @ W2[:-1].T) * (hidden > 0)
        grad_hidden = np.vstack([X.T @ back, back.sum(axis=0)])
        grad = np.concatenate([grad_hidden.ravel(), grad_out.ravel()])
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    return grad


def model_update(
    spec: ModelSpec,
    w: np.ndarray,
    dataset: "Dataset",
    batch_size: int,
    lr: float,
    local_iters: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Run ``local_iters`` SGD steps from ``w`` and return ``w_final - w``.

    Batches are drawn without replacement from a shuffled order; the data are
    reshuffled once fewer than ``batch_size`` unseen examples remain. When the
    batch covers the whole dataset, examples are used in their stored order.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot compute a model update on an empty dataset")
    if batch_size < 1 or local_iters < 1:
        raise ConfigError("batch size and local iterations must be >= 1")
    if lr < 0:
        raise ConfigError("learning rate must be non-negative")

    X, y = dataset.X, dataset.y
    n = len(y)
    w = np.asarray(w, dtype=np.float64)
    current = w.copy()
    if batch_size >= n:
        for _ in range(local_iters):
            current -= lr * gradient(spec, current, X, y)
        return current - w

    order = rng.permutation(n)
    cursor = 0
    for _ in range(local_iters):
        if cursor + batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + batch_size]
        cursor += batch_size
        current -= lr * gradient(spec, current, X[idx], y[idx])
    return current - w

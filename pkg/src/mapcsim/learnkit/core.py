"""Shared pieces: initialisation, activations, MSE, Adam, the training loop."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


class TrainingDivergenceError(RuntimeError):
    """Raised when a batch loss or gradient becomes non-finite."""


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def mse(y, target):
    """Mean squared error and its gradient w.r.t. ``y``."""
    diff = y - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self):
        return asdict(self)


class Adam:
    """Adam with bias-corrected first and second moments."""

    def __init__(self, params: dict, cfg: TrainConfig = TrainConfig()):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict):
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1**self.t
        b2t = 1.0 - c.beta2**self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            params[k] -= c.learning_rate * (m / b1t) / (np.sqrt(v / b2t) + c.eps)


def backprop_and_step(model, batch, cfg: TrainConfig, optimizer: Adam, rng=None) -> float:
    """One MSE gradient step on ``batch=(inputs, targets)``; returns the pre-update loss."""
    X, T = batch
    if len(X) == 0:
        raise ValueError("empty batch")
    y, cache = model.forward(X, train=True, rng=rng)
    loss, dy = mse(y, T)
    if not math.isfinite(loss):
        raise TrainingDivergenceError(f"non-finite loss {loss}")
    grads = model.backward(dy, cache)
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient for {k}")
    optimizer.step(model.params, grads)
    return loss


def evaluate(model, X, T, batch_size: int = 4096) -> float:
    total = 0.0
    for s in range(0, len(X), batch_size):
        y = model.predict(X[s:s + batch_size])
        total += float(np.sum((y - T[s:s + batch_size]) ** 2))
    return total / max(1, np.asarray(T).size)


def fit(model, X, T, cfg: TrainConfig, seed=0, *, optimizer: Adam | None = None,
        validation=None, epochs: int | None = None, rng: np.random.Generator | None = None,
        callback=None):
    """Mini-batch training with per-epoch shuffling.

    Returns ``(history, optimizer, rng)``; ``history`` holds per-epoch mean
    batch losses and, when ``validation=(Xv, Tv)`` is given, validation MSE.
    Passing back ``optimizer`` and ``rng`` continues a run exactly.
    """
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float)
    if len(X) == 0:
        raise ValueError("no training samples")
    optimizer = optimizer or Adam(model.params, cfg)
    rng = rng or np.random.default_rng(seed)
    history = {"train_loss": [], "val_loss": []}
    n = len(X)
    for epoch in range(cfg.epochs if epochs is None else epochs):
        order = rng.permutation(n)
        losses = []
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            losses.append(backprop_and_step(model, (X[idx], T[idx]), cfg, optimizer, rng))
        history["train_loss"].append(float(np.mean(losses)))
        if validation is not None:
            history["val_loss"].append(evaluate(model, *validation))
        if callback is not None:
            callback(epoch, history)
    return history, optimizer, rng

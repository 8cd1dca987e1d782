"""Mini-batch Adam training of the live/VoD network on labeled windows."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .lstm import Params, backward, init_params, predict_proba

__all__ = ["Adam", "ConfigError", "TrainConfig", "TrainResult", "confusion_matrix", "train"]

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid training configuration or unusable corpus."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 1e-3  # L2 on MLP weight matrices only
    epochs: int = 40
    rng_seed: int = 0
    threshold: float = 0.5
    holdout: float = 0.2

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.holdout < 1.0:
            raise ConfigError("holdout must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")


class Adam:
    """Adam over a list of arrays, updated in place."""

    def __init__(self, arrays: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.arrays = arrays
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for a, g, m, v in zip(self.arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray) -> np.ndarray:
    """2×2 counts, rows = actual (live, VoD), columns = predicted (live, VoD)."""
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    return np.array([
        [np.sum(y_true & y_pred), np.sum(y_true & ~y_pred)],
        [np.sum(~y_true & y_pred), np.sum(~y_true & ~y_pred)],
    ], dtype=np.int64)


@dataclass
class TrainResult:
    params: Params
    epoch_losses: list[float]
    train_idx: np.ndarray
    test_idx: np.ndarray
    test_accuracy: float | None
    confusion: np.ndarray | None
    config: TrainConfig
    extra: dict = field(default_factory=dict)


def _split(y: np.ndarray, holdout: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Stratified shuffle split: the same fraction of each class is held out."""
    train, test = [], []
    for cls in (0, 1):
        idx = rng.permutation(np.flatnonzero(y == cls))
        k = int(round(holdout * len(idx)))
        test.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def train(X, y, cfg: TrainConfig = TrainConfig(), *, init: Params | None = None,
          split: tuple[np.ndarray, np.ndarray] | None = None) -> TrainResult:
    """Fit the network to windows ``X`` (n, steps) with labels ``y`` (1 = live).

    A stratified ``cfg.holdout`` fraction is set aside (or ``split`` is used as
    given); the result reports accuracy and the confusion matrix on it.
    Everything is deterministic given ``cfg.rng_seed``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or len(X) != len(y):
        raise ConfigError("X must be (n, steps) with one label per row")
    if not np.all((y == 0) | (y == 1)):
        raise ConfigError("labels must be 0 (VoD) or 1 (live)")
    if len(np.unique(y)) < 2:
        raise ConfigError("training corpus must contain both live and VoD windows")
    rng = np.random.default_rng(cfg.rng_seed)
    train_idx, test_idx = split if split is not None else _split(y, cfg.holdout, rng)
    if len(np.unique(y[train_idx])) < 2:
        raise ConfigError("training split must contain both live and VoD windows")

    params = init.copy() if init is not None else init_params(cfg.rng_seed)
    arrays = params.arrays()
    opt = Adam(arrays, lr=cfg.learning_rate)
    decay = {id(w) for w in params.mlp.weights}
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(train_idx)
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            batch = order[s : s + cfg.batch_size]
            loss, grads = backward(X[batch], y[batch], params)
            g = grads.arrays()
            if cfg.weight_decay:
                g = [gi + cfg.weight_decay * a if id(a) in decay else gi for a, gi in zip(arrays, g)]
            opt.step(g)
            total += loss * len(batch)
        losses.append(total / len(order))
        log.debug("epoch %d loss %.5f", epoch, losses[-1])

    acc = conf = None
    if len(test_idx):
        pred = predict_proba(X[test_idx], params) >= cfg.threshold
        acc = float(np.mean(pred == (y[test_idx] == 1)))
        conf = confusion_matrix(y[test_idx] == 1, pred)
    return TrainResult(params, losses, train_idx, test_idx, acc, conf, cfg)

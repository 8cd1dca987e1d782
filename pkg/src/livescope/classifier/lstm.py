"""Single-layer LSTM (hidden 32) followed by a 32-16-8-4-1 MLP.

The LSTM reads the request-count window one bin per step; the final hidden
state goes through three ReLU layers and a sigmoid output giving the
probability that the window belongs to a live stream.

Gate parameters are stored explicitly per gate in the order
input, forget, output, candidate: ``W[g]`` is 32×33 with column 0 acting on
the input count and columns 1..32 on the previous hidden state.
Everything runs in float64 on batches of shape (batch, steps).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "GATES",
    "HIDDEN",
    "MLP_DIMS",
    "LstmParams",
    "MlpParams",
    "Params",
    "backward",
    "bce_loss",
    "forward",
    "forward_logits",
    "init_params",
    "predict_proba",
    "zero_params",
]

HIDDEN = 32
GATES = ("input", "forget", "output", "candidate")
MLP_DIMS = (HIDDEN, 16, 8, 4, 1)
#: float64 sigmoid rounds to exactly 0 or 1 for |logit| beyond ~37 / ~745;
#: probabilities are kept strictly inside (0, 1)
_P_MIN = np.nextafter(0.0, 1.0)
_P_MAX = np.nextafter(1.0, 0.0)


@dataclass
class LstmParams:
    W: np.ndarray  # (4, HIDDEN, 1 + HIDDEN)
    b: np.ndarray  # (4, HIDDEN)


@dataclass
class MlpParams:
    weights: list[np.ndarray]  # (out, in) per layer
    biases: list[np.ndarray]  # (out,) per layer


@dataclass
class Params:
    lstm: LstmParams
    mlp: MlpParams

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order (views, not copies)."""
        return [self.lstm.W, self.lstm.b, *self.mlp.weights, *self.mlp.biases]

    def names(self) -> list[str]:
        n = len(self.mlp.weights)
        return ["lstm.W", "lstm.b"] + [f"mlp.W{i}" for i in range(n)] + [f"mlp.b{i}" for i in range(n)]

    def copy(self) -> "Params":
        return Params(
            LstmParams(self.lstm.W.copy(), self.lstm.b.copy()),
            MlpParams([w.copy() for w in self.mlp.weights], [b.copy() for b in self.mlp.biases]),
        )

    def validate(self) -> None:
        if self.lstm.W.shape != (4, HIDDEN, 1 + HIDDEN) or self.lstm.b.shape != (4, HIDDEN):
            raise ValueError("LSTM parameter shapes do not match a 32-unit single-input cell")
        for i, (w, b) in enumerate(zip(self.mlp.weights, self.mlp.biases)):
            shape = (MLP_DIMS[i + 1], MLP_DIMS[i])
            if w.shape != shape or b.shape != (shape[0],):
                raise ValueError(f"MLP layer {i} has shape {w.shape}/{b.shape}, expected {shape}")
        if len(self.mlp.weights) != len(MLP_DIMS) - 1:
            raise ValueError("MLP must have four layers")
        for a in self.arrays():
            if not np.all(np.isfinite(a)):
                raise ValueError("parameters must be finite")


def init_params(seed: int = 0) -> Params:
    """Uniform(-k, k) with k = 1/sqrt(fan_in) for every array."""
    rng = np.random.default_rng(seed)
    k = 1.0 / np.sqrt(HIDDEN)
    W = rng.uniform(-k, k, (4, HIDDEN, 1 + HIDDEN))
    b = rng.uniform(-k, k, (4, HIDDEN))
    weights, biases = [], []
    for fan_in, fan_out in zip(MLP_DIMS[:-1], MLP_DIMS[1:]):
        k = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-k, k, (fan_out, fan_in)))
        biases.append(rng.uniform(-k, k, fan_out))
    return Params(LstmParams(W, b), MlpParams(weights, biases))


def zero_params() -> Params:
    return Params(
        LstmParams(np.zeros((4, HIDDEN, 1 + HIDDEN)), np.zeros((4, HIDDEN))),
        MlpParams([np.zeros((o, i)) for i, o in zip(MLP_DIMS[:-1], MLP_DIMS[1:])],
                  [np.zeros(o) for o in MLP_DIMS[1:]]),
    )


def _as_batch(x) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValueError("input must be a (batch, steps) array of request counts")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains non-finite values")
    if np.any(X < 0):
        raise ValueError("request counts must be non-negative")
    return X


def _stacked(p: LstmParams) -> tuple[np.ndarray, np.ndarray]:
    """Gate weights as one (33, 128) matrix and a (128,) bias."""
    return p.W.reshape(4 * HIDDEN, 1 + HIDDEN).T, p.b.reshape(4 * HIDDEN)


def _lstm(X: np.ndarray, p: LstmParams, keep: bool):
    B, T = X.shape
    Wt, bias = _stacked(p)
    h = np.zeros((B, HIDDEN))
    c = np.zeros((B, HIDDEN))
    xh = np.empty((B, 1 + HIDDEN))
    cache = []
    for t in range(T):
        xh[:, 0] = X[:, t]
        xh[:, 1:] = h
        z = xh @ Wt + bias
        ifo = expit(z[:, : 3 * HIDDEN])
        g = np.tanh(z[:, 3 * HIDDEN :])
        i, f, o = ifo[:, :HIDDEN], ifo[:, HIDDEN : 2 * HIDDEN], ifo[:, 2 * HIDDEN :]
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        if keep:
            cache.append((xh.copy(), i, f, o, g, c_prev, tc))
    return h, cache


def _mlp(h: np.ndarray, p: MlpParams, keep: bool):
    a = h
    acts = [a]
    n = len(p.weights)
    for k, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = a @ w.T + b
        a = np.maximum(z, 0.0) if k < n - 1 else z
        acts.append(a)
    return a[:, 0], (acts if keep else None)


def forward_logits(x, params: Params) -> np.ndarray:
    """Pre-sigmoid output for a batch (or a single window)."""
    X = _as_batch(x)
    h, _ = _lstm(X, params.lstm, keep=False)
    logit, _ = _mlp(h, params.mlp, keep=False)
    return logit


def predict_proba(x, params: Params) -> np.ndarray:
    """Probability of "live" per window, shape (batch,)."""
    return np.clip(expit(forward_logits(x, params)), _P_MIN, _P_MAX)


def forward(x, params: Params) -> float:
    """Probability of "live" for a single window."""
    X = _as_batch(x)
    if X.shape[0] != 1:
        raise ValueError("forward() takes one window; use predict_proba for batches")
    return float(predict_proba(X, params)[0])


def bce_loss(logits: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy computed from logits (no log(0))."""
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def backward(x, y, params: Params) -> tuple[float, Params]:
    """Mean BCE over the batch and its gradient for every parameter."""
    X = _as_batch(x)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(y) != len(X):
        raise ValueError("one label per window required")
    B, T = X.shape
    h, cache = _lstm(X, params.lstm, keep=True)
    logit, acts = _mlp(h, params.mlp, keep=True)
    loss = bce_loss(logit, y)

    # MLP
    n = len(params.mlp.weights)
    gW: list[np.ndarray] = [None] * n
    gb: list[np.ndarray] = [None] * n
    delta = ((expit(logit) - y) / B)[:, None]
    for k in range(n - 1, -1, -1):
        gW[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        delta = delta @ params.mlp.weights[k]
        if k > 0:
            delta = delta * (acts[k] > 0)
    dh = delta

    # LSTM, backpropagation through time
    Wt, _ = _stacked(params.lstm)
    gWt = np.zeros_like(Wt)
    gbias = np.zeros(4 * HIDDEN)
    dc = np.zeros((B, HIDDEN))
    dz = np.empty((B, 4 * HIDDEN))
    for xh, i, f, o, g, c_prev, tc in reversed(cache):
        dct = dc + dh * o * (1.0 - tc * tc)
        dz[:, :HIDDEN] = dct * g * i * (1.0 - i)
        dz[:, HIDDEN : 2 * HIDDEN] = dct * c_prev * f * (1.0 - f)
        dz[:, 2 * HIDDEN : 3 * HIDDEN] = dh * tc * o * (1.0 - o)
        dz[:, 3 * HIDDEN :] = dct * i * (1.0 - g * g)
        gWt += xh.T @ dz
        gbias += dz.sum(axis=0)
        dh = dz @ Wt.T[:, 1:]
        dc = dct * f
    grads = Params(
        LstmParams(gWt.T.reshape(4, HIDDEN, 1 + HIDDEN).copy(), gbias.reshape(4, HIDDEN)),
        MlpParams(gW, gb),
    )
    return loss, grads

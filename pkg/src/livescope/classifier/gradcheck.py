"""Central finite-difference check of the LSTM/MLP gradients.

Perturbing one parameter at a time and re-running the network would need
~10,000 forward passes per check. Instead every (parameter, ±h) pair is a
row of one large batch: each row carries its own single-entry perturbation,
applied to that row's gate (or layer) pre-activation at every step. One
batched forward pass then yields all perturbed losses at once.
"""

from __future__ import annotations

import numpy as np

from .lstm import HIDDEN, LstmParams, MlpParams, Params, _as_batch, _mlp, _stacked, backward

__all__ = ["GRAD_FLOOR", "check_gradients", "numerical_gradients", "relative_error"]

#: gradients below this magnitude are compared on an absolute scale: with
#: h = 1e-6 the central difference of a 60-step recurrence carries up to
#: ~2e-10 of roundoff, which no relative test can resolve on tiny gradients
GRAD_FLOOR = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRAD_FLOOR) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _sample_loss(logit: np.ndarray, y: float) -> np.ndarray:
    return np.logaddexp(0.0, logit) - y * logit


def _lstm_rows(x: np.ndarray, p: LstmParams, col: np.ndarray, src: np.ndarray, delta: np.ndarray,
               block: int = 512) -> np.ndarray:
    """Final hidden state for rows whose stacked pre-activation ``col`` gets
    ``delta * xh[src]`` added each step (``src == -1``: plain bias shift).

    Sigmoid gates are evaluated as 0.5 + 0.5·tanh(z/2) so one tanh call covers
    all four gates; rows are processed in cache-sized blocks.
    """
    R = len(col)
    Wt, bias = _stacked(p)
    Wt, bias = Wt.copy(), bias.copy()
    Wt[:, : 3 * HIDDEN] *= 0.5
    bias[: 3 * HIDDEN] *= 0.5
    out = np.empty((R, HIDDEN))
    for s in range(0, R, block):
        cl, sr = col[s : s + block], src[s : s + block]
        dl = np.where(cl < 3 * HIDDEN, 0.5, 1.0) * delta[s : s + block]
        n = len(cl)
        rows = np.arange(n)
        is_bias = sr < 0
        src_w = np.where(is_bias, 0, sr)
        h = np.zeros((n, HIDDEN))
        c = np.zeros((n, HIDDEN))
        tc = np.empty((n, HIDDEN))
        xh = np.empty((n, 1 + HIDDEN))
        z = np.empty((n, 4 * HIDDEN))
        for t in range(len(x)):
            xh[:, 0] = x[t]
            xh[:, 1:] = h
            np.matmul(xh, Wt, out=z)
            z += bias
            z[rows, cl] += dl * np.where(is_bias, 1.0, xh[rows, src_w])
            np.tanh(z, out=z)
            ifo = z[:, : 3 * HIDDEN]
            ifo *= 0.5
            ifo += 0.5
            c *= z[:, HIDDEN : 2 * HIDDEN]
            c += z[:, :HIDDEN] * z[:, 3 * HIDDEN :]
            np.tanh(c, out=tc)
            np.multiply(z[:, 2 * HIDDEN : 3 * HIDDEN], tc, out=h)
        out[s : s + block] = h
    return out


def _mlp_rows(h: np.ndarray, p: MlpParams, layer: np.ndarray, out: np.ndarray, src: np.ndarray,
              delta: np.ndarray) -> np.ndarray:
    R = len(layer)
    a = np.repeat(h, R, axis=0)
    rows = np.arange(R)
    n = len(p.weights)
    for k, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = a @ w.T + b
        sel = layer == k
        r = rows[sel]
        add = np.where(src[sel] < 0, 1.0, a[r, np.maximum(src[sel], 0)])
        z[r, out[sel]] += delta[sel] * add
        a = np.maximum(z, 0.0) if k < n - 1 else z
    return a[:, 0]


def numerical_gradients(x, y: float, params: Params, h: float = 1e-6) -> Params:
    """Central differences (L(θ+h) − L(θ−h)) / 2h of the single-window BCE."""
    X = _as_batch(x)
    if X.shape[0] != 1:
        raise ValueError("finite differences are taken for one window")
    x = X[0]

    # LSTM parameters: W[g, j, k] acts on stacked column g*H + j, input k.
    G, H, K = params.lstm.W.shape
    gi, ji, ki = np.meshgrid(np.arange(G), np.arange(H), np.arange(K), indexing="ij")
    col_w, src_w = (gi * H + ji).ravel(), ki.ravel()
    col_b = np.arange(G * H)
    col = np.concatenate([col_w, col_b])
    src = np.concatenate([src_w, -np.ones(G * H, dtype=np.int64)])
    P = len(col)
    delta = np.concatenate([np.full(P, h), np.full(P, -h)])
    hT = _lstm_rows(x, params.lstm, np.tile(col, 2), np.tile(src, 2), delta)
    logits = _mlp(hT, params.mlp, keep=False)[0]
    L = _sample_loss(logits, y)
    d = (L[:P] - L[P:]) / (2 * h)
    gW = d[: G * H * K].reshape(G, H, K)
    gb = d[G * H * K :].reshape(G, H)

    # MLP parameters: one perturbed layer per row on the unperturbed LSTM state.
    h0 = _lstm_rows(x, params.lstm, np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64), np.zeros(1))
    layer, out, srcm, slots = [], [], [], []
    for k, w in enumerate(params.mlp.weights):
        o, i = np.meshgrid(np.arange(w.shape[0]), np.arange(w.shape[1]), indexing="ij")
        layer.append(np.full(w.size, k))
        out.append(o.ravel())
        srcm.append(i.ravel())
        slots.append(("W", k, w.shape))
    for k, b in enumerate(params.mlp.biases):
        layer.append(np.full(b.size, k))
        out.append(np.arange(b.size))
        srcm.append(-np.ones(b.size, dtype=np.int64))
        slots.append(("b", k, b.shape))
    layer, out, srcm = np.concatenate(layer), np.concatenate(out), np.concatenate(srcm)
    Q = len(layer)
    delta = np.concatenate([np.full(Q, h), np.full(Q, -h)])
    logits = _mlp_rows(h0, params.mlp, np.tile(layer, 2), np.tile(out, 2), np.tile(srcm, 2), delta)
    L = _sample_loss(logits, y)
    d = (L[:Q] - L[Q:]) / (2 * h)
    weights, biases = [], []
    pos = 0
    for kind, _, shape in slots:
        size = int(np.prod(shape))
        (weights if kind == "W" else biases).append(d[pos : pos + size].reshape(shape))
        pos += size
    return Params(LstmParams(gW, gb), MlpParams(weights, biases))


def check_gradients(x, y: float, params: Params, h: float = 1e-6, floor: float = GRAD_FLOOR) -> dict[str, float]:
    """Worst relative error per parameter array (analytic vs numerical)."""
    _, analytic = backward(np.atleast_2d(np.asarray(x, dtype=np.float64)), [y], params)
    numeric = numerical_gradients(x, y, params, h)
    return {
        name: float(relative_error(a, n, floor).max())
        for name, a, n in zip(params.names(), analytic.arrays(), numeric.arrays())
    }

"""Periodicity baseline: autocorrelation peak lags fed to a random forest.

The download-rate series (bytes per 100 ms) of a stream is autocorrelated at
whole-second lags 1..30; the lags of the three strongest local peaks describe
its fetch period (≈2 s for live, ≈10 s for VoD).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..forest import NotFittedError, RandomForest

__all__ = ["BaselineModel", "RATE_BIN", "autocorr_peak_lags", "rate_series", "unbiased_autocorr"]

RATE_BIN = 0.1
MAX_LAG_S = 30
#: peak values are compared after rounding so exactly periodic inputs do not
#: pick their order from float noise
_DECIMALS = 12


def rate_series(times, sizes, start: float, duration: float = 60.0, bin_width: float = RATE_BIN) -> np.ndarray:
    """Bytes per ``bin_width`` over [start, start + duration)."""
    n = int(round(duration / bin_width))
    t = np.asarray(times, dtype=np.float64)
    s = np.asarray(sizes, dtype=np.float64)
    k = np.floor((t - start) / bin_width + 1e-9).astype(np.int64)
    keep = (k >= 0) & (k < n)
    return np.bincount(k[keep], weights=s[keep], minlength=n)


def unbiased_autocorr(x, lags) -> np.ndarray:
    """r(k) = [Σ (x_t − μ)(x_{t+k} − μ) / (N − k)] / var(x) for each lag k."""
    x = np.asarray(x, dtype=np.float64)
    d = x - x.mean()
    var = float(np.dot(d, d)) / len(d)
    if var <= 0:
        return np.zeros(len(lags))
    n = len(d)
    return np.array([np.dot(d[: n - k], d[k:]) / (n - k) / var for k in lags])


def autocorr_peak_lags(series, bin_width: float = RATE_BIN, max_lag_s: int = MAX_LAG_S) -> tuple[int, int, int]:
    """Lags (s) of the top-3 autocorrelation peaks, strongest first, 0-padded.

    A peak is a lag whose value exceeds both neighbours (one neighbour at the
    ends of the 1..max_lag_s range) and the mean over all lags. Ties in value
    go to the shorter lag. A constant series has no peaks: (0, 0, 0).
    """
    x = np.asarray(series, dtype=np.float64)
    steps = int(round(1.0 / bin_width))
    if len(x) < (max_lag_s + 1) * steps:
        raise ValueError(f"need at least {max_lag_s + 1} s of samples")
    lags_s = np.arange(1, max_lag_s + 1)
    r = np.round(unbiased_autocorr(x, lags_s * steps), _DECIMALS)
    if not np.any(r):
        return (0, 0, 0)
    mean = r.mean()
    peaks = []
    for i in range(len(r)):
        left = r[i - 1] if i > 0 else -np.inf
        right = r[i + 1] if i + 1 < len(r) else -np.inf
        if r[i] > left and r[i] > right and r[i] > mean:
            peaks.append((-r[i], lags_s[i]))
    top = [int(lag) for _, lag in sorted(peaks)[:3]]
    return tuple(top + [0] * (3 - len(top)))  # type: ignore[return-value]


@dataclass
class BaselineModel:
    """Forest over the three peak lags; class 0 = VoD, 1 = live.

    With VoD as the lower class the forest's argmax tie rule sends an even
    vote split to VoD.
    """

    forest: RandomForest

    @classmethod
    def fit(cls, lags, y, *, n_trees: int = 100, max_depth: int = 8, seed: int = 0) -> "BaselineModel":
        y = np.asarray(y).astype(np.int64)
        rf = RandomForest(n_trees=n_trees, max_depth=max_depth, seed=seed).fit(np.asarray(lags, dtype=np.float64), y)
        return cls(rf)

    def votes(self, lags) -> np.ndarray:
        if not self.forest.fitted:
            raise NotFittedError("baseline forest has not been trained")
        return self.forest.votes(np.atleast_2d(np.asarray(lags, dtype=np.float64)))

    def predict(self, lags) -> np.ndarray:
        """1 for live, 0 for VoD."""
        if not self.forest.fitted:
            raise NotFittedError("baseline forest has not been trained")
        return self.forest.predict(np.atleast_2d(np.asarray(lags, dtype=np.float64))).astype(np.int64)

    def to_dict(self) -> dict:
        return {"forest": self.forest.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineModel":
        return cls(RandomForest.from_dict(d["forest"]))

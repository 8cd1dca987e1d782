"""Trained classifier wrapper and versioned model files.

Model files are JSON (written with orjson, whose float formatting
round-trips float64 exactly) with a format tag, a version, the kind of
model and explicit shape metadata for every array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import orjson

from ..packets import StreamKind
from .lstm import MLP_DIMS, LstmParams, MlpParams, Params, predict_proba

__all__ = [
    "FORMAT",
    "VERSION",
    "LiveVodModel",
    "ModelFormatError",
    "Prediction",
    "load_model",
    "params_from_dict",
    "params_to_dict",
    "save_model",
]

FORMAT = "livescope-model"
VERSION = 1
WINDOW_BINS = {10: 20, 20: 40, 30: 60}


class ModelFormatError(ValueError):
    """Unreadable, corrupted or incompatible model file."""


@dataclass(frozen=True)
class Prediction:
    probability_live: float
    label: StreamKind
    window_start: float

    def __post_init__(self):
        if (self.label is StreamKind.LIVE) != (self.probability_live >= 0.5):
            raise ValueError("label must be live exactly when probability_live >= 0.5")


@dataclass
class LiveVodModel:
    """LSTM classifier for one provider and window length."""

    params: Params
    provider: str
    window_seconds: int = 30
    threshold: float = 0.5
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.window_seconds not in WINDOW_BINS:
            raise ValueError("window_seconds must be 10, 20 or 30")
        self.params.validate()

    @property
    def window_bins(self) -> int:
        return WINDOW_BINS[self.window_seconds]

    def proba(self, windows) -> np.ndarray:
        X = np.atleast_2d(np.asarray(windows, dtype=np.float64))
        if X.shape[1] != self.window_bins:
            raise ValueError(f"expected windows of {self.window_bins} bins, got {X.shape[1]}")
        return predict_proba(X, self.params)

    def predict(self, windows) -> np.ndarray:
        """1 for live, 0 for VoD."""
        return (self.proba(windows) >= self.threshold).astype(np.int64)

    def classify(self, window, window_start: float) -> Prediction:
        p = float(self.proba(window)[0])
        return Prediction(p, StreamKind.LIVE if p >= self.threshold else StreamKind.VOD, window_start)


# ---------------------------------------------------------------------------
# (de)serialization


def params_to_dict(p: Params) -> dict:
    return {
        name: {"shape": list(a.shape), "data": a.ravel().tolist()}
        for name, a in zip(p.names(), p.arrays())
    }


def _array(d: dict, name: str, shape: tuple[int, ...]) -> np.ndarray:
    try:
        entry = d[name]
        got = tuple(entry["shape"])
        a = np.asarray(entry["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"parameter {name!r} missing or malformed") from exc
    if got != shape or a.size != int(np.prod(shape)):
        raise ModelFormatError(f"parameter {name!r} has shape {got}, expected {shape}")
    if not np.all(np.isfinite(a)):
        raise ModelFormatError(f"parameter {name!r} contains non-finite values")
    return a.reshape(shape)


def params_from_dict(d: dict) -> Params:
    from .lstm import HIDDEN

    n = len(MLP_DIMS) - 1
    W = _array(d, "lstm.W", (4, HIDDEN, 1 + HIDDEN))
    b = _array(d, "lstm.b", (4, HIDDEN))
    weights = [_array(d, f"mlp.W{i}", (MLP_DIMS[i + 1], MLP_DIMS[i])) for i in range(n)]
    biases = [_array(d, f"mlp.b{i}", (MLP_DIMS[i + 1],)) for i in range(n)]
    return Params(LstmParams(W, b), MlpParams(weights, biases))


def _encode(model) -> dict:
    from ..qoe import ResolutionModel
    from .baseline import BaselineModel

    if isinstance(model, LiveVodModel):
        body = {
            "kind": "lstm",
            "provider": model.provider,
            "window_seconds": model.window_seconds,
            "threshold": model.threshold,
            "metrics": model.metrics,
            "params": params_to_dict(model.params),
        }
    elif isinstance(model, BaselineModel):
        body = {"kind": "baseline", **model.to_dict()}
    elif isinstance(model, ResolutionModel):
        body = {"kind": "resolution", **model.to_dict()}
    else:
        raise TypeError(f"cannot save {type(model).__name__}")
    return {"format": FORMAT, "version": VERSION, **body}


def _decode(d: dict):
    from ..qoe import ResolutionModel
    from .baseline import BaselineModel

    if not isinstance(d, dict) or d.get("format") != FORMAT:
        raise ModelFormatError("not a livescope model file")
    if d.get("version") != VERSION:
        raise ModelFormatError(f"model file version {d.get('version')!r} is not supported (expected {VERSION})")
    kind = d.get("kind")
    try:
        if kind == "lstm":
            return LiveVodModel(params_from_dict(d["params"]), d["provider"], int(d["window_seconds"]),
                                float(d["threshold"]), dict(d.get("metrics") or {}))
        if kind == "baseline":
            return BaselineModel.from_dict(d)
        if kind == "resolution":
            return ResolutionModel.from_dict(d)
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ModelFormatError(f"corrupted {kind} model: {exc}") from exc
    raise ModelFormatError(f"unknown model kind {kind!r}")


def save_model(model, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(orjson.dumps(_encode(model), option=orjson.OPT_SORT_KEYS))
    return path


def load_model(path: str | Path):
    """Load any model written by :func:`save_model`.

    Raises ``ModelFormatError`` for corrupted, foreign or wrong-version files
    and ``OSError`` if the file cannot be read.
    """
    raw = Path(path).read_bytes()
    try:
        d = orjson.loads(raw)
    except orjson.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON") from exc
    return _decode(d)

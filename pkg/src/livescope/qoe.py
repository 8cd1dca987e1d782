"""QoE inference for live streams from chunk telemetry.

Three steps, all on the chunk list of one stream:

1. keep the video chunks (drop audio and manifests),
2. estimate the playback resolution bin from the mean video chunk size with a
   random forest,
3. replay the buffer estimator over video chunk end times to flag stalls
   per 5-second window.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .flowtab import Chunk
from .forest import NotFittedError, RandomForest, cross_val_accuracy
from .packets import Provider

__all__ = [
    "AUDIO_BANDS",
    "BufferState",
    "BufferTrajectory",
    "InsufficientWarmup",
    "ResolutionModel",
    "StallParams",
    "default_buf_min",
    "estimate_resolution",
    "estimate_seg_dur",
    "infer_youtube_mode",
    "interval_windows",
    "mean_chunk_feature",
    "window_chunks",
    "predict_buffer",
    "separate_video_chunks",
    "train_resolution_forest",
]

log = logging.getLogger(__name__)

KB = 1024
MANIFEST_MAX_BYTES = 4 * KB
TWITCH_VIDEO_MIN_BYTES = 40 * KB
AUDIO_BANDS = {"YT_ULL": (28 * KB, 34 * KB), "YT_LL": (56 * KB, 68 * KB)}
SEG_DUR_CHOICES = (1.0, 2.0, 4.0)
STALL_WINDOW = 5.0
#: request-length gap (bytes) below which all requests count as one cluster
MIN_CLUSTER_GAP = 64


class InsufficientWarmup(ValueError):
    """Fewer than two video chunks inside the warm-up window."""


# ---------------------------------------------------------------------------
# video / audio separation


def _split_request_lengths(lengths: np.ndarray) -> float | None:
    """Threshold between two request-length clusters (largest gap), or None."""
    u = np.unique(lengths)
    if len(u) < 2:
        return None
    gaps = np.diff(u)
    k = int(np.argmax(gaps))
    if gaps[k] < MIN_CLUSTER_GAP:
        return None
    return float(u[k] + gaps[k] / 2.0)


def infer_youtube_mode(chunks: Sequence[Chunk]) -> str:
    """Guess ULL vs LL from the audio chunks' size.

    Audio requests are the shorter request-length cluster; their median size
    sits in one of the two audio bands. Without two clusters the band that
    captures more chunks wins.
    """
    sized = [c for c in chunks if c.chunk_bytes >= MANIFEST_MAX_BYTES]
    if not sized:
        return "YT_LL"
    lengths = np.array([c.request_packet_length for c in sized])
    cut = _split_request_lengths(lengths)
    if cut is not None:
        small = np.array([c.chunk_bytes for c in sized if c.request_packet_length <= cut])
        ull_hi, ll_lo = AUDIO_BANDS["YT_ULL"][1], AUDIO_BANDS["YT_LL"][0]
        return "YT_ULL" if np.median(small) < (ull_hi + ll_lo) / 2 else "YT_LL"
    b = np.array([c.chunk_bytes for c in sized])
    hits = {m: int(np.sum((b >= lo) & (b <= hi))) for m, (lo, hi) in AUDIO_BANDS.items()}
    return "YT_ULL" if hits["YT_ULL"] > hits["YT_LL"] else "YT_LL"


def separate_video_chunks(chunks: Iterable[Chunk], provider: Provider | str, mode: str | None = None) -> list[Chunk]:
    """Video-only subset of a live stream's chunks, in request order.

    Twitch keeps chunks above 40 KB (audio segments are ~35 KB). YouTube drops
    chunks that both fall inside the mode's audio size band and were fetched
    by the shorter request-length cluster. Manifest-sized chunks (< 4 KB) go
    for every provider.
    """
    provider = Provider(provider)
    sized = sorted((c for c in chunks if c.chunk_bytes >= MANIFEST_MAX_BYTES), key=lambda c: c.request_time)
    if provider is Provider.TWITCH:
        return [c for c in sized if c.chunk_bytes > TWITCH_VIDEO_MIN_BYTES]
    if provider is Provider.YOUTUBE:
        mode = mode or infer_youtube_mode(sized)
        lo, hi = AUDIO_BANDS[mode]
        cut = _split_request_lengths(np.array([c.request_packet_length for c in sized]))

        def is_audio(c: Chunk) -> bool:
            in_band = lo <= c.chunk_bytes <= hi
            return in_band and (cut is None or c.request_packet_length <= cut)

        return [c for c in sized if not is_audio(c)]
    log.warning("no separation rule for provider %s; passing chunks through", provider.value)
    return sized


# ---------------------------------------------------------------------------
# buffer estimation


@dataclass(frozen=True)
class StallParams:
    seg_dur: float
    buf_min: float

    def __post_init__(self):
        if not (self.seg_dur > 0 and self.buf_min > 0):
            raise ValueError("seg_dur and buf_min must be positive")


def estimate_seg_dur(video_chunks: Sequence[Chunk], warmup_n: float = 20.0, *, snap: bool = True) -> float:
    """Median inter-request time of the video chunks in the first ``warmup_n``
    seconds, snapped to 1, 2 or 4 s (ties go to the shorter duration)."""
    if not video_chunks:
        raise InsufficientWarmup("no video chunks")
    times = sorted(c.request_time for c in video_chunks)
    t0 = times[0]
    warm = [t for t in times if t - t0 <= warmup_n]
    if len(warm) < 2:
        raise InsufficientWarmup(f"{len(warm)} video chunk(s) in the first {warmup_n} s")
    raw = float(np.median(np.diff(warm)))
    if not snap:
        return raw
    return min(SEG_DUR_CHOICES, key=lambda s: (abs(s - raw), s))


def default_buf_min(provider: Provider | str, mode: str | None, seg_dur: float) -> float:
    """Playback-start threshold: one segment for Twitch, 3 s (ULL) / 6 s (LL)
    for YouTube."""
    provider = Provider(provider)
    if provider is Provider.YOUTUBE:
        if mode == "YT_ULL":
            return 3.0
        if mode == "YT_LL":
            return 6.0
        return 3.0 if seg_dur <= 1.0 else 6.0
    return float(seg_dur)


@dataclass
class BufferState:
    current_buffer: float = 0.0
    last_chunk_end: float = 0.0
    playback_started: bool = False
    stall_windows: set[int] = field(default_factory=set)


@dataclass
class BufferTrajectory:
    """Estimator output: buffer after every video chunk, plus stalls."""

    times: np.ndarray  # chunk end times
    buffer: np.ndarray  # estimate just after each chunk
    stall_marks: list[float]  # chunk end times where the estimate hit zero
    stall_intervals: list[tuple[float, float]]  # zero-buffer spans of the running estimate
    windows: np.ndarray  # bool per STALL_WINDOW-second window
    state: BufferState

    def buffer_at(self, t: float) -> float:
        """Estimate at the last chunk end not after ``t`` (0 before any)."""
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return float(self.buffer[k]) if k >= 0 else 0.0


def interval_windows(intervals: Iterable[tuple[float, float]], duration: float, width: float = STALL_WINDOW) -> np.ndarray:
    """Flag every ``width``-second window that a closed interval touches."""
    n = max(1, math.ceil(duration / width - 1e-9))
    flags = np.zeros(n, dtype=bool)
    for s, e in intervals:
        lo = int(s // width)
        hi = int(e // width)
        if lo >= n:
            continue
        flags[max(lo, 0) : min(hi, n - 1) + 1] = True
    return flags


def predict_buffer(video_chunks: Sequence[Chunk], params: StallParams, duration: float | None = None,
                   window: float = STALL_WINDOW) -> BufferTrajectory:
    """Run the chunk-driven buffer estimator.

    ``b`` grows by one segment per video chunk; while it is at most
    ``buf_min`` playback is assumed not to run, afterwards the time since the
    previous chunk end is drained. Hitting zero at a chunk end marks a stall.
    Between chunks the estimate drains in real time, so whenever it would run
    out before the next chunk lands (at ``t + b``) the span up to that chunk's
    end is a zero-buffer span; windows touched by such spans are flagged.
    """
    seg, buf_min = params.seg_dur, params.buf_min
    b = 0.0
    t = 0.0
    state = BufferState()
    times, values, marks, intervals = [], [], [], []
    for c in video_chunks:
        end = c.chunk_end_time
        before = b
        b += seg
        if b <= buf_min:
            t = end
            times.append(end)
            values.append(b)
            continue
        state.playback_started = True
        gap = end - t
        if before < gap:
            # the running estimate drains to zero before this chunk lands
            intervals.append((t + before, end))
        b -= gap
        if b <= 0:
            b = 0.0
            marks.append(end)
        t = end
        times.append(end)
        values.append(b)
    state.current_buffer = b
    state.last_chunk_end = t
    if duration is None:
        duration = times[-1] if times else 0.0
    flags = interval_windows(intervals, duration, window) if duration > 0 else np.zeros(0, dtype=bool)
    state.stall_windows = set(np.flatnonzero(flags).tolist())
    return BufferTrajectory(np.asarray(times), np.asarray(values), marks, intervals, flags, state)


# ---------------------------------------------------------------------------
# resolution


def mean_chunk_feature(video_chunks: Sequence[Chunk], seg_dur: float = 2.0) -> float:
    """Mean video chunk size, rescaled to a 2-second segment."""
    if not video_chunks:
        return float("nan")
    return float(np.mean([c.chunk_bytes for c in video_chunks])) * 2.0 / seg_dur


def window_chunks(video_chunks: Sequence[Chunk], origin: float, window: float = 30.0) -> dict[int, list[Chunk]]:
    """Video chunks grouped by the ``window``-second slot of their request time."""
    out: dict[int, list[Chunk]] = {}
    for c in video_chunks:
        k = int((c.request_time - origin) // window)
        if k >= 0:
            out.setdefault(k, []).append(c)
    return out


@dataclass
class ResolutionModel:
    """Forest over the single feature ``mean video chunk bytes (2-s scale)``."""

    forest: RandomForest
    variant: str  # "bin" or "exact"
    cv_accuracy: float | None = None

    def to_dict(self) -> dict:
        return {"variant": self.variant, "cv_accuracy": self.cv_accuracy, "forest": self.forest.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ResolutionModel":
        return cls(RandomForest.from_dict(d["forest"]), d["variant"], d.get("cv_accuracy"))


def train_resolution_forest(features: Sequence[float], labels: Sequence[str], *, variant: str = "bin",
                            n_trees: int = 100, max_depth: int = 8, seed: int = 0, folds: int = 5) -> ResolutionModel:
    """Fit the resolution forest and report its k-fold accuracy."""
    X = np.asarray(features, dtype=np.float64).reshape(-1, 1)
    y = np.asarray(labels)
    if len(np.unique(y)) < 2:
        raise ValueError("resolution training data needs at least two classes")
    cv = float(np.mean(cross_val_accuracy(X, y, k=folds, seed=seed, n_trees=n_trees, max_depth=max_depth))) if folds > 1 else None
    rf = RandomForest(n_trees=n_trees, max_depth=max_depth, seed=seed).fit(X, y)
    return ResolutionModel(rf, variant, cv)


def estimate_resolution(mean_chunk_bytes: float, model: ResolutionModel | RandomForest) -> str:
    forest = model.forest if isinstance(model, ResolutionModel) else model
    if not forest.fitted:
        raise NotFittedError("resolution forest has not been trained")
    return str(forest.predict(np.array([[mean_chunk_bytes]]))[0])

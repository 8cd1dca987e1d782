"""Training and evaluation sets built straight from simulated traces.

Simulated traces are columnar, so request counters, download-rate series and
chunks can be computed with array operations instead of replaying every
packet through the flow table. The results are the same quantities the
streaming path produces (tests hold the two paths equal); only the speed
differs, which matters for corpora of thousands of streams.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import orjson

from .classifier.baseline import autocorr_peak_lags, rate_series
from .flowtab import Chunk, FlowTable
from .packets import REQUEST_PAYLOAD_THRESHOLD, Direction, Provider, ProviderTag, TraceReader, match_provider
from .qoe import (
    InsufficientWarmup,
    estimate_seg_dur,
    infer_youtube_mode,
    mean_chunk_feature,
    separate_video_chunks,
    window_chunks,
)
from .session import Session, aggregate
from .tracegen.corpus import simulate_family
from .tracegen.profiles import resolution_bin
from .tracegen.trace import Trace

__all__ = [
    "FAMILIES",
    "TraceSession",
    "WindowSet",
    "CorpusTrace",
    "classifier_windows",
    "corpus_files",
    "corpus_resolution_samples",
    "corpus_windows",
    "group_split",
    "read_corpus_trace",
    "resolution_samples",
    "trace_chunks",
    "trace_sessions",
]

_BIN_US = 500_000
FAMILIES = {"twitch": ("twitch-live", "twitch-vod"), "youtube": ("youtube-live", "youtube-vod")}
#: window start offsets (s) sampled per simulated stream; Twitch streams are
#: only ever classified on their first window. Four YouTube offsets put the
#: default conditioner's 10-s cap (every 40 s from t = 30) into each third of
#: a window at least once.
WINDOW_OFFSETS = {"twitch": (0.0,), "youtube": (0.0, 30.0, 60.0, 90.0)}
BASELINE_SPAN = 60.0


def trace_chunks(trace: Trace, flow: int) -> list[Chunk]:
    """Chunks of one flow of a columnar trace (vectorized demarcation)."""
    sel = np.flatnonzero(trace.flow == flow)
    ts, up, pl = trace.ts[sel], trace.up[sel], trace.payload[sel]
    req = up & (pl > REQUEST_PAYLOAD_THRESHOLD)
    n = int(req.sum())
    if n == 0:
        return []
    cid = np.cumsum(req) - 1
    data = ~up & (pl > 0) & (cid >= 0)
    k = cid[data]
    packets = np.bincount(k, minlength=n)
    nbytes = np.bincount(k, weights=pl[data], minlength=n).astype(np.int64)
    req_t = ts[req]
    start = req_t.copy()
    end = req_t.copy()
    if len(k):
        # data packets are time-ordered, so the first/last per chunk are min/max
        first = np.r_[True, k[1:] != k[:-1]]
        last = np.r_[k[1:] != k[:-1], True]
        start[k[first]] = ts[data][first]
        end[k[last]] = ts[data][last]
    lens = pl[req]
    return [
        Chunk(float(a), int(b), float(c), float(d), int(e), int(f))
        for a, b, c, d, e, f in zip(req_t.tolist(), lens.tolist(), start.tolist(), end.tolist(),
                                    packets.tolist(), nbytes.tolist())
    ]


@dataclass
class TraceSession:
    """One classifiable session of a simulated trace."""

    provider: Provider
    flows: list[int]
    origin: float  # first packet of the session
    request_times: np.ndarray
    down_times: np.ndarray
    down_bytes: np.ndarray

    def counts(self) -> np.ndarray:
        o = round(self.origin * 1e6)
        bins = (np.rint(self.request_times * 1e6).astype(np.int64) - o) // _BIN_US
        return np.bincount(bins, minlength=int(bins.max()) + 1 if len(bins) else 0)

    def window(self, start_bin: int, length: int = 60) -> np.ndarray | None:
        c = self.counts()
        if len(c) < start_bin + length:
            c = np.concatenate([c, np.zeros(start_bin + length - len(c), dtype=c.dtype)])
        return c[start_bin : start_bin + length]

    def rate(self, start: float, duration: float = BASELINE_SPAN) -> np.ndarray:
        return rate_series(self.down_times, self.down_bytes, self.origin + start, duration)


def trace_sessions(trace: Trace) -> list[TraceSession]:
    """Sessions as the pipeline forms them: Twitch per flow, YouTube per client."""
    groups: dict[tuple, list[int]] = {}
    providers: dict[tuple, Provider] = {}
    for i, f in enumerate(trace.flows):
        tag = match_provider(f.sni) if (f.proto == "tcp" and f.sni) else None
        if tag is None or tag.provider is Provider.UNKNOWN:
            continue
        key = (f.src, f.proto) if tag.provider is Provider.YOUTUBE else (f.src, f.proto, f.sport)
        groups.setdefault(key, []).append(i)
        providers[key] = tag.provider
    out = []
    for key, flows in groups.items():
        m = np.isin(trace.flow, flows)
        ts, up, pl = trace.ts[m], trace.up[m], trace.payload[m]
        req = up & (pl > REQUEST_PAYLOAD_THRESHOLD)
        down = ~up & (pl > 0)
        out.append(TraceSession(providers[key], flows, float(ts[0]), ts[req], ts[down], pl[down]))
    out.sort(key=lambda s: s.origin)
    return out


# ---------------------------------------------------------------------------
# live / VoD windows


@dataclass
class WindowSet:
    provider: str
    X: np.ndarray  # (n, 60) request counts
    lags: np.ndarray  # (n, 3) autocorrelation peak lags of the same windows
    y: np.ndarray  # 1 live, 0 VoD
    stream: np.ndarray  # generating stream id (for grouped splits)
    offset: np.ndarray  # window start, seconds from session start

    def __len__(self) -> int:
        return len(self.y)

    def truncated(self, bins: int) -> np.ndarray:
        return self.X[:, :bins]


def _stream_windows(args) -> tuple[list[np.ndarray], list[tuple[int, int, int]], int]:
    provider, family, index, seed, condition, offsets = args
    duration = max(offsets) + BASELINE_SPAN + 2.0
    trace, truth = simulate_family(family, index, seed, duration, condition)
    sessions = [s for s in trace_sessions(trace) if s.provider.value == provider]
    if not sessions:
        return [], [], 0
    s = sessions[0]
    X, L = [], []
    for off in offsets:
        X.append(s.window(int(round(off / 0.5))))
        L.append(autocorr_peak_lags(s.rate(off)))
    return X, L, int(truth.kind == "live")


def _map(fn, jobs, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, jobs, chunksize=8))
    return [fn(j) for j in jobs]


def classifier_windows(provider: str, n_windows: int, *, seed: int = 0, condition: str = "default",
                       offsets: tuple[float, ...] | None = None, workers: int = 1) -> WindowSet:
    """Balanced live/VoD windows (60 bins each) from freshly simulated streams.

    Each stream contributes one window per offset; the download-rate series
    for the baseline spans 60 s from the same window start.
    """
    if provider not in FAMILIES:
        raise ValueError(f"unknown provider {provider!r}")
    offsets = offsets or WINDOW_OFFSETS[provider]
    per_class = n_windows // 2
    n_streams = math.ceil(per_class / len(offsets))
    jobs = [(provider, fam, i, seed, condition, offsets) for fam in FAMILIES[provider] for i in range(n_streams)]
    X, L, y, stream, off = [], [], [], [], []
    counts = {0: 0, 1: 0}
    for sid, (xs, ls, label) in enumerate(_map(_stream_windows, jobs, workers)):
        for o, x, lag in zip(offsets, xs, ls):
            if counts[label] >= per_class:
                break
            counts[label] += 1
            X.append(x)
            L.append(lag)
            y.append(label)
            stream.append(sid)
            off.append(o)
    return WindowSet(provider, np.asarray(X, dtype=np.int64), np.asarray(L, dtype=np.int64),
                     np.asarray(y, dtype=np.int64), np.asarray(stream), np.asarray(off, dtype=np.float64))


def group_split(groups, y, holdout: float = 0.2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/test split that keeps all windows of a stream together."""
    groups, y = np.asarray(groups), np.asarray(y)
    rng = np.random.default_rng(seed)
    test = []
    for cls in np.unique(y):
        g = rng.permutation(np.unique(groups[y == cls]))
        test.extend(g[: int(round(holdout * len(g)))].tolist())
    mask = np.isin(groups, test)
    return np.flatnonzero(~mask), np.flatnonzero(mask)


# ---------------------------------------------------------------------------
# resolution samples


def _stream_resolution(args) -> list[tuple[float, str]]:
    provider, family, index, seed, duration, window = args
    trace, truth = simulate_family(family, index, seed, duration, "none")
    sessions = [s for s in trace_sessions(trace) if s.provider.value == provider]
    if not sessions:
        return []
    s = sessions[0]
    chunks = sorted((c for f in s.flows for c in trace_chunks(trace, f)), key=lambda c: c.request_time)
    video = separate_video_chunks(chunks, provider)
    try:
        seg = estimate_seg_dur(video)
    except InsufficientWarmup:
        return []
    out = []
    for k, cs in sorted(window_chunks(video, s.origin, window).items()):
        if (k + 1) * window <= duration - s.origin:  # complete windows only
            out.append((mean_chunk_feature(cs, seg), truth.resolution))
    return out


def resolution_samples(provider: str, n_streams: int, *, seed: int = 0, duration: float = 60.0,
                       window: float = 30.0, workers: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(feature, exact resolution, bin, stream id) per 30-s window of uncapped live streams."""
    family = FAMILIES[provider][0]
    jobs = [(provider, family, i, seed, duration, window) for i in range(n_streams)]
    feats, exact, sid = [], [], []
    for k, rows in enumerate(_map(_stream_resolution, jobs, workers)):
        for f, r in rows:
            feats.append(f)
            exact.append(r)
            sid.append(k)
    exact = np.asarray(exact)
    bins = np.asarray([resolution_bin(r) for r in exact])
    return np.asarray(feats), exact, bins, np.asarray(sid)


# ---------------------------------------------------------------------------
# corpora on disk (streaming path: reader → flow table → sessions)


@dataclass
class CorpusTrace:
    """Sessions of one trace file plus what is needed to label and score them."""

    path: Path
    sessions: list[Session]
    kinds: dict[str, str]  # session name -> "live" / "vod" (when known)
    down: dict  # flow key -> (times, payload sizes) of downstream data packets
    truth: dict | None

    def rate(self, session: Session, start: float, duration: float = BASELINE_SPAN) -> np.ndarray:
        parts = [self.down[f.flow_key] for f in session.flows if f.flow_key in self.down]
        times = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
        sizes = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0)
        return rate_series(times, sizes, session.start + start, duration)


def corpus_files(directory: str | Path, fmt: str = "jsonl") -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"corpus directory {directory} does not exist")
    return sorted(directory.glob(f"*.{fmt}"))


def _truth(path: Path) -> dict | None:
    p = path.with_name(path.name.rsplit(".", 1)[0] + ".truth.json")
    try:
        return orjson.loads(p.read_bytes()) if p.is_file() else None
    except orjson.JSONDecodeError:
        return None


def read_corpus_trace(path: str | Path, fmt: str = "jsonl", provider: str | None = None) -> CorpusTrace:
    """Replay one trace through the flow table and group its flows into sessions.

    Labels come from the trace's inline label fields or, failing that, from
    its ``.truth.json`` sibling. UDP flows take their provider from the label
    (they carry no SNI).
    """
    path = Path(path)
    reader = TraceReader(path, fmt)
    table = FlowTable()
    down: dict = {}
    for p in reader:
        table.ingest(p)
        if p.direction is Direction.DOWN and p.payload_len:
            t, b = down.setdefault(p.flow_key, ([], []))
            t.append(p.timestamp)
            b.append(p.payload_len)
    records = table.flush()
    labels = reader.labels
    fixed = []
    for r in records:
        lab = labels.get(r.flow_key)
        if r.flow_key.protocol == "udp" and lab and lab.get("provider") in ("twitch", "youtube"):
            r = replace(r, provider_tag=ProviderTag(Provider(lab["provider"])))
        fixed.append(r)
    sessions = aggregate(fixed, provider)
    truth = _truth(path)
    kinds = {}
    for s in sessions:
        ks = {labels[f.flow_key].get("kind") for f in s.flows if f.flow_key in labels}
        ks.discard(None)
        if not ks and truth and truth.get("provider") == s.provider.value:
            ks = {truth["kind"]}
        if len(ks) == 1:
            kinds[s.name] = ks.pop()
    down = {k: (np.asarray(t), np.asarray(b, dtype=np.float64)) for k, (t, b) in down.items()}
    return CorpusTrace(path, sessions, kinds, down, truth)


def corpus_windows(directory: str | Path, provider: str, window_seconds: int = 30, fmt: str = "jsonl") -> WindowSet:
    """Labeled windows of every session of ``provider`` in a corpus directory.

    Twitch sessions contribute their first window only (the only one the
    pipeline classifies); YouTube sessions contribute every complete window.
    Windows are grouped by file for splitting.
    """
    bins = int(round(window_seconds / 0.5))
    X, L, y, stream, off = [], [], [], [], []
    for i, path in enumerate(corpus_files(directory, fmt)):
        ct = read_corpus_trace(path, fmt, provider)
        for s in ct.sessions:
            kind = ct.kinds.get(s.name)
            if kind not in ("live", "vod"):
                continue
            counts = s.request_counts()
            n = len(counts) // bins
            if provider == "twitch":
                n = min(n, 1)
            for k in range(n):
                X.append(counts[k * bins : (k + 1) * bins])
                L.append(autocorr_peak_lags(ct.rate(s, k * window_seconds)))
                y.append(int(kind == "live"))
                stream.append(i)
                off.append(k * window_seconds)
    if not X:
        return WindowSet(provider, np.zeros((0, bins), dtype=np.int64), np.zeros((0, 3), dtype=np.int64),
                         np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))
    return WindowSet(provider, np.asarray(X, dtype=np.int64), np.asarray(L, dtype=np.int64),
                     np.asarray(y, dtype=np.int64), np.asarray(stream), np.asarray(off, dtype=np.float64))


def _rung_during(truth: dict, lo: float, hi: float) -> str | None:
    """The single rung delivered during [lo, hi), or None if it changed."""
    timeline = truth.get("resolution_timeline") or []
    current = timeline[0][1] if timeline else truth["resolution"]
    seen = set()
    for when, res in timeline:
        if when <= lo:
            current = res
        elif when < hi:
            seen.add(res)
    seen.add(current)
    return current if len(seen) == 1 else None


def corpus_resolution_samples(directory: str | Path, provider: str, fmt: str = "jsonl",
                              window: float = 30.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(feature, resolution bin, file id) per complete window of live sessions.

    Needs the ``.truth.json`` siblings for the resolution labels; windows in
    which the rung changed are left out.
    """
    from .tracegen.profiles import resolution_bin

    feats, bins, groups = [], [], []
    for i, path in enumerate(corpus_files(directory, fmt)):
        ct = read_corpus_trace(path, fmt, provider)
        if ct.truth is None or ct.truth.get("kind") != "live":
            continue
        for s in ct.sessions:
            chunks = s.chunks()
            mode = infer_youtube_mode(chunks) if s.provider is Provider.YOUTUBE else None
            video = separate_video_chunks(chunks, s.provider, mode)
            try:
                seg = estimate_seg_dur(video)
            except InsufficientWarmup:
                continue
            for k, cs in sorted(window_chunks(video, s.start, window).items()):
                lo, hi = s.start + k * window, s.start + (k + 1) * window
                if hi > s.end:
                    continue
                rung = _rung_during(ct.truth, lo, hi)
                if rung is None:
                    continue
                feats.append(mean_chunk_feature(cs, seg))
                bins.append(resolution_bin(rung))
                groups.append(i)
    return np.asarray(feats), np.asarray(bins), np.asarray(groups)

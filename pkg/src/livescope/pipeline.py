"""End-to-end streaming evaluation: packets → flows → sessions → windows → QoE.

Packets are pushed through the flow table one at a time. Every half second
of trace time the pipeline attaches newly tagged flows to sessions and
classifies each session window whose bins are complete. Live declarations
switch on chunk consumption for that session: once every chunk requested
inside a live window has closed, the window's video chunks yield a QoE
record (resolution bin, stall flag, buffer estimate).

All outputs are sorted by (session, window start) before writing, so runs
over the same input are byte-identical.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import orjson

from .classifier.train import ConfigError
from .classifier.model import WINDOW_BINS, LiveVodModel, ModelFormatError, load_model
from .flowtab import FlowTable, _FlowState
from .packets import Packet, Provider, ProviderTag, StreamKind, TraceReader, extract_sni
from .qoe import (
    STALL_WINDOW,
    InsufficientWarmup,
    ResolutionModel,
    StallParams,
    default_buf_min,
    estimate_resolution,
    estimate_seg_dur,
    infer_youtube_mode,
    interval_windows,
    mean_chunk_feature,
    predict_buffer,
    separate_video_chunks,
)
from .session import SESSION_IDLE, Declared, Label, SessionState, State

__all__ = ["ConfigError", "Models", "Pipeline", "PipelineConfig", "RunOutput", "build_report", "run"]

log = logging.getLogger(__name__)

_BIN_US = 500_000
_TICK = 0.5


@dataclass(frozen=True)
class PipelineConfig:
    window_seconds: int = 30
    qoe: bool = True
    flow_idle: float = 120.0
    session_idle: float = SESSION_IDLE

    def __post_init__(self):
        if self.window_seconds not in WINDOW_BINS:
            raise ConfigError("window_seconds must be 10, 20 or 30")

    @property
    def window_bins(self) -> int:
        return WINDOW_BINS[self.window_seconds]


def model_filename(provider: str, kind: str, window_seconds: int = 30) -> str:
    if kind == "lstm":
        return f"{provider}-lstm-w{window_seconds}.json"
    return f"{provider}-{kind}.json"


@dataclass
class Models:
    classifiers: dict[str, LiveVodModel] = field(default_factory=dict)
    resolution: dict[str, ResolutionModel] = field(default_factory=dict)

    @classmethod
    def load(cls, directory: str | Path, window_seconds: int = 30) -> "Models":
        """Load whatever per-provider models exist in ``directory``.

        Missing files are allowed (that provider is skipped at run time); a
        present but unreadable model is an error.
        """
        directory = Path(directory)
        if not directory.is_dir():
            raise ConfigError(f"model directory {directory} does not exist")
        out = cls()
        for prov in ("twitch", "youtube"):
            p = directory / model_filename(prov, "lstm", window_seconds)
            if p.exists():
                m = load_model(p)
                if not isinstance(m, LiveVodModel) or m.window_seconds != window_seconds:
                    raise ModelFormatError(f"{p} is not a {window_seconds}-s classifier")
                out.classifiers[prov] = m
            p = directory / model_filename(prov, "resolution")
            if p.exists():
                m = load_model(p)
                if not isinstance(m, ResolutionModel):
                    raise ModelFormatError(f"{p} is not a resolution model")
                out.resolution[prov] = m
        return out


# ---------------------------------------------------------------------------
# sessions


class _Session:
    __slots__ = (
        "name", "provider", "key", "origin", "origin_us", "members", "last_seen", "sm", "next_window",
        "windows", "one_shot", "live_windows", "qoe_next", "params", "mode", "kind_labels",
    )

    def __init__(self, name: str, provider: Provider, key: tuple, first: _FlowState):
        self.name = name
        self.provider = provider
        self.key = key
        self.origin = first.first_ts
        self.origin_us = first.first_us
        self.members: list[_FlowState] = [first]
        self.last_seen = first.last_ts
        self.sm = SessionState()
        self.next_window = 0
        self.windows: list[dict] = []
        self.one_shot = provider is Provider.TWITCH
        self.live_windows: list[int] = []  # windows with a live declaration awaiting QoE
        self.qoe_next = 0
        self.params: StallParams | None = None
        self.mode: str | None = None
        self.kind_labels: list[str] = []

    @property
    def last_ts(self) -> float:
        return max(m.last_ts for m in self.members)

    def n_bins(self) -> int:
        return (max(round(m.last_ts * 1e6) for m in self.members) - self.origin_us) // _BIN_US + 1

    def window_counts(self, k: int, bins: int) -> np.ndarray:
        lo = k * bins
        counts = np.zeros(bins, dtype=np.float64)
        if len(self.members) == 1:  # the flow's own counters share the origin
            src = self.members[0].counts[lo : lo + bins]
            counts[: len(src)] = src
            return counts
        for m in self.members:
            for t in m.request_times:
                b = (round(t * 1e6) - self.origin_us) // _BIN_US - lo
                if 0 <= b < bins:
                    counts[b] += 1
        return counts

    def chunks_closed_before(self, t: float) -> bool:
        """True when no member flow still has an open chunk requested before ``t``."""
        for m in self.members:
            r = m.builder.open_request_time
            if r is not None and r < t:
                return False
        return True

    def chunks(self):
        out = [c for m in self.members for c in m.builder.chunks]
        out.sort(key=lambda c: (c.request_time, c.chunk_end_time))
        return out


@dataclass
class RunOutput:
    windows: list[dict]
    sessions: list[dict]
    qoe: list[dict]
    report: dict

    def write(self, out_dir: str | Path, csv_mirror: bool = False) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, rows in (("windows", self.windows), ("sessions", self.sessions), ("qoe", self.qoe)):
            p = out_dir / f"{name}.jsonl"
            with open(p, "wb") as fh:
                for r in rows:
                    fh.write(orjson.dumps(r) + b"\n")
            paths.append(p)
            if csv_mirror:
                paths.append(_write_csv(out_dir / f"{name}.csv", rows))
        p = out_dir / "report.json"
        p.write_bytes(orjson.dumps(self.report, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
        paths.append(p)
        return paths


def _write_csv(path: Path, rows: list[dict]) -> Path:
    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: (orjson.dumps(v).decode() if isinstance(v, (list, dict)) else v) for k, v in r.items()})
    return path


def _r6(x: float) -> float:
    return round(float(x), 6)


class Pipeline:
    """Streaming evaluator; feed packets with :meth:`push`, then :meth:`finish`."""

    def __init__(self, models: Models, cfg: PipelineConfig = PipelineConfig(),
                 udp_labels: dict | None = None):
        self.models = models
        self.cfg = cfg
        self.table = FlowTable(cfg.flow_idle, on_finalize=_discard)
        self.sessions: list[_Session] = []
        self.open_youtube: dict[tuple, _Session] = {}
        self.pending: list[_FlowState] = []
        self.udp_labels = udp_labels if udp_labels is not None else _NoLabels()
        self.qoe_records: list[dict] = []
        self.flows_total = 0
        self.flows_tagged = {"twitch": 0, "youtube": 0, "unknown": 0}
        self.skipped_providers: set[str] = set()
        self._next_tick = _TICK
        self.packets = 0

    # -- ingest -------------------------------------------------------------
    def push(self, p: Packet) -> None:
        if p.timestamp >= self._next_tick:
            self._tick(p.timestamp)
        self.table.ingest(p)
        self.packets += 1
        st = self.table.flows[p.flow_key]
        # a flow state is new exactly when this packet opened it
        if st.packets == 1 and st.first_ts == p.timestamp:
            self.pending.append(st)
            self.flows_total += 1

    def run(self, packets: Iterable[Packet]) -> "RunOutput":
        for p in packets:
            self.push(p)
        return self.finish()

    # -- periodic work ------------------------------------------------------
    def _tick(self, now: float) -> None:
        self._next_tick = (math.floor(now / _TICK) + 1) * _TICK
        self._attach(final=False)
        for s in self.sessions:
            self._advance(s, now, final=False)

    def _tag_of(self, st: _FlowState) -> ProviderTag | None:
        if st.key.protocol == "udp":
            lab = self.udp_labels.get(st.key)
            prov = (lab or {}).get("provider")
            return ProviderTag(Provider(prov)) if prov in ("twitch", "youtube") else ProviderTag()
        return st.tag

    def _attach(self, final: bool) -> None:
        keep = []
        for st in self.pending:
            tag = self._tag_of(st)
            if tag is None:
                if not final:
                    keep.append(st)
                    continue
                tag = extract_sni(st.hello) if st.hello else ProviderTag()
            prov = tag.provider
            self.flows_tagged[prov.value] += 1
            if prov is Provider.UNKNOWN:
                continue
            if prov.value not in self.models.classifiers:
                if prov.value not in self.skipped_providers:
                    log.warning("no classifier for %s; its flows are skipped", prov.value)
                    self.skipped_providers.add(prov.value)
                continue
            k = st.key
            if prov is Provider.TWITCH:
                s = _Session(f"{k.src_ip}/{k.protocol}/{k.src_port}", prov, (k.src_ip, k.protocol), st)
                self.sessions.append(s)
            else:
                key = (k.src_ip, k.protocol)
                s = self.open_youtube.get(key)
                if s is not None and st.first_ts - s.last_ts > self.cfg.session_idle:
                    s = None
                if s is None:
                    n = sum(1 for x in self.sessions if x.key == key and x.provider is prov)
                    s = _Session(f"{k.src_ip}/{k.protocol}" + (f"#{n}" if n else ""), prov, key, st)
                    self.sessions.append(s)
                    self.open_youtube[key] = s
                else:
                    s.members.append(st)
        self.pending = keep

    def _advance(self, s: _Session, now: float, final: bool) -> None:
        W, bins = self.cfg.window_seconds, self.cfg.window_bins
        model = self.models.classifiers[s.provider.value]
        while True:
            k = s.next_window
            if s.one_shot and k >= 1:
                break
            end = s.origin + (k + 1) * W
            if not final and now < end:
                break
            if s.n_bins() < (k + 1) * bins:
                break  # tail window: never labelled
            x = s.window_counts(k, bins)
            pred = model.classify(x, _r6(s.origin + k * W))
            lab = Label.LIVE if pred.label is StreamKind.LIVE else Label.VOD
            if s.one_shot:
                s.sm.state = State.SURELY_LIVE if lab is Label.LIVE else State.SURELY_VOD
                s.sm.declared = Declared.LIVE if lab is Label.LIVE else Declared.VOD
                s.sm.window_history.append(lab)
            else:
                s.sm.update(lab)
            s.windows.append({
                "session": s.name,
                "provider": s.provider.value,
                "window": k,
                "window_start": _r6(s.origin + k * W),
                "probability_live": _r6(pred.probability_live),
                "label": lab.value,
                "state": s.sm.state.value,
                "declared": s.sm.declared.value,
            })
            s.next_window += 1
            if self.cfg.qoe and s.sm.declared is Declared.LIVE and not s.one_shot:
                s.live_windows.append(k)
        if self.cfg.qoe and s.one_shot and s.sm.declared is Declared.LIVE:
            # Twitch: the first-window declaration holds for the whole flow
            while True:
                k = len(s.live_windows)
                if s.n_bins() < (k + 1) * bins or (not final and now < s.origin + (k + 1) * W):
                    break
                s.live_windows.append(k)
        self._emit_qoe(s, final)

    # -- QoE ---------------------------------------------------------------
    def _emit_qoe(self, s: _Session, final: bool) -> None:
        W = self.cfg.window_seconds
        while s.qoe_next < len(s.live_windows):
            k = s.live_windows[s.qoe_next]
            w_start, w_end = s.origin + k * W, s.origin + (k + 1) * W
            if not final and not s.chunks_closed_before(w_end):
                break
            s.qoe_next += 1
            rec = self._qoe_record(s, k, w_start, w_end)
            if rec is not None:
                self.qoe_records.append(rec)

    def _qoe_record(self, s: _Session, k: int, w_start: float, w_end: float) -> dict | None:
        prov, W = s.provider, self.cfg.window_seconds
        chunks = s.chunks()
        if prov is Provider.YOUTUBE and s.mode is None:
            s.mode = infer_youtube_mode([c for c in chunks if c.request_time < w_end])
        video = separate_video_chunks(chunks, prov, s.mode)
        if s.params is None:
            try:
                seg = estimate_seg_dur([c for c in video if c.request_time < w_end])
            except InsufficientWarmup:
                return None
            s.params = StallParams(seg, default_buf_min(prov, s.mode, seg))
        seg = s.params.seg_dur
        in_win = [c for c in video if w_start <= c.request_time < w_end]
        upto = [c for c in video if c.request_time < w_end]
        traj = predict_buffer(upto, s.params)
        rel = [(a - s.origin, b - s.origin) for a, b in traj.stall_intervals]
        flags = interval_windows(rel, (k + 1) * W, STALL_WINDOW)
        per = int(round(W / STALL_WINDOW))
        stall = bool(flags[k * per : (k + 1) * per].any())
        feat = mean_chunk_feature(in_win, seg) if in_win else float("nan")
        res_model = self.models.resolution.get(prov.value)
        res_bin = estimate_resolution(feat, res_model) if (res_model is not None and in_win) else None
        return {
            "flow": s.name,
            "window_start": _r6(w_start),
            "resolution_bin": res_bin,
            "stall": stall,
            "buffer_est": _r6(traj.buffer_at(w_end)),
            "mean_chunk_bytes": int(round(feat)) if in_win else None,
        }

    # -- finish ------------------------------------------------------------
    def finish(self) -> RunOutput:
        self.table.flush()
        self._attach(final=True)
        for s in self.sessions:
            self._advance(s, math.inf, final=True)
        windows = sorted((w for s in self.sessions for w in s.windows), key=lambda r: (r["session"], r["window_start"]))
        qoe = sorted(self.qoe_records, key=lambda r: (r["flow"], r["window_start"]))
        sessions = []
        for s in sorted(self.sessions, key=lambda s: s.name):
            timeline, last = [], None
            for w in s.windows:
                if w["declared"] != last:
                    timeline.append([w["window_start"], w["declared"]])
                    last = w["declared"]
            # the most recent declaration stays in force through Maybe states
            made = [d for _, d in timeline if d != "undeclared"]
            verdict = made[-1] if made else "undeclared"
            sessions.append({
                "session": s.name,
                "provider": s.provider.value,
                "declared": s.sm.declared.value,
                "verdict": verdict,
                "windows": [w["label"] for w in s.windows],
                "state_trace": [w["state"] for w in s.windows],
                "declaration_timeline": timeline,
                "start": _r6(s.origin),
                "end": _r6(s.last_ts),
                "flows": [str(m.key) for m in s.members],
            })
        report = build_report(sessions, qoe, windows, self)
        return RunOutput(windows, sessions, qoe, report)


def build_report(sessions: list[dict], qoe: list[dict], windows: list[dict], pipeline: Pipeline | None = None,
                 labels: dict[str, str] | None = None) -> dict:
    """Per-provider share of live/VoD sessions, resolution-bin time fractions
    and stalled-window percentage (plus accuracy when labels are known)."""
    per: dict[str, dict] = {}
    for prov in ("twitch", "youtube"):
        ss = [s for s in sessions if s["provider"] == prov]
        q = [r for r in qoe if any(r["flow"] == s["session"] for s in ss)]
        n = len(ss)
        bins = [r["resolution_bin"] for r in q if r["resolution_bin"] is not None]
        per[prov] = {
            "sessions": n,
            "live_pct": _pct(sum(s["verdict"] == "live" for s in ss), n),
            "vod_pct": _pct(sum(s["verdict"] == "vod" for s in ss), n),
            "undeclared_pct": _pct(sum(s["verdict"] == "undeclared" for s in ss), n),
            "resolution_time_pct": {b: _pct(bins.count(b), len(bins)) for b in ("LD", "SD", "HD", "SOURCE")},
            "stalled_windows_pct": _pct(sum(r["stall"] for r in q), len(q)),
            "qoe_windows": len(q),
        }
    report = {"providers": per, "sessions": len(sessions), "windows": len(windows), "qoe_records": len(qoe)}
    if pipeline is not None:
        report.update({
            "packets": pipeline.packets,
            "flows": pipeline.flows_total,
            "flows_by_provider": dict(pipeline.flows_tagged),
            "dropped_out_of_order": pipeline.table.dropped,
            "classified_sessions": sum(1 for s in sessions if s["windows"]),
        })
    if labels:
        scored = [(s, labels[s["session"]]) for s in sessions if s["session"] in labels and s["windows"]]
        correct = sum(s["verdict"] == kind for s, kind in scored)
        report["accuracy"] = correct / len(scored) if scored else None
        report["labelled_sessions"] = len(scored)
    return report


def _pct(a: int, n: int) -> float:
    return round(100.0 * a / n, 4) if n else 0.0


def session_labels(sessions: list[dict], flow_labels: dict) -> dict[str, str]:
    """Ground-truth kind per session from the trace's sidecar labels."""
    by_flow = {str(k): v for k, v in flow_labels.items()}
    out = {}
    for s in sessions:
        kinds = {by_flow[f]["kind"] for f in s["flows"] if f in by_flow and by_flow[f].get("kind")}
        if len(kinds) == 1:
            out[s["session"]] = kinds.pop()
    return out


def _truth_labels(source: str | Path, sessions: list[dict]) -> dict[str, str]:
    """Labels from a single-stream trace's ``.truth.json`` sibling, if any."""
    p = Path(source)
    truth = p.with_name(p.name.rsplit(".", 1)[0] + ".truth.json")
    if not truth.is_file():
        return {}
    try:
        t = orjson.loads(truth.read_bytes())
        provider, kind = t["provider"], t["kind"]
    except (orjson.JSONDecodeError, KeyError, TypeError):
        log.warning("ignoring unreadable %s", truth)
        return {}
    return {s["session"]: kind for s in sessions if s["provider"] == provider}


def run(source: str | Path, models: Models, cfg: PipelineConfig = PipelineConfig(), *,
        fmt: str = "jsonl", score: bool = True) -> tuple[RunOutput, dict]:
    """Evaluate one trace file. Returns the outputs and reader statistics.

    Sidecar labels are read by the trace reader but reach the pipeline only
    for UDP provider tagging; when ``score`` is set they are used afterwards
    to attach an accuracy figure to the report.
    """
    reader = TraceReader(source, fmt)
    udp = _UdpLabels(reader.labels)
    pipe = Pipeline(models, cfg, udp_labels=udp)
    t0 = time.perf_counter()
    out = pipe.run(reader)
    elapsed = time.perf_counter() - t0
    if score:
        labels = session_labels(out.sessions, reader.labels) if reader.labels else _truth_labels(source, out.sessions)
        if labels:
            out.report = build_report(out.sessions, out.qoe, out.windows, pipe, labels)
    out.report["records_skipped"] = reader.skipped
    stats = {"packets": reader.emitted, "skipped": reader.skipped, "seconds": elapsed,
             "packets_per_second": reader.emitted / elapsed if elapsed > 0 else float("inf")}
    return out, stats


def _discard(record) -> None:
    """Finished flows stay reachable through their sessions."""


class _NoLabels:
    def get(self, key, default=None):
        return default


class _UdpLabels:
    """View exposing only the provider of UDP flows' labels.

    The reader fills its label map while iterating, so lookups are live.
    """

    def __init__(self, labels: dict):
        self._labels = labels

    def get(self, key, default=None):
        lab = self._labels.get(key)
        if lab is None or key.protocol != "udp":
            return default
        return {"provider": lab.get("provider")}

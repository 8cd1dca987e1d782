"""Discrete-event simulator of one streaming client behind a bottleneck link.

The model is deliberately small:

* one FIFO downlink whose rate follows a :class:`ConditionerSchedule`;
  packet departure times come from inverting the link's cumulative
  capacity, so a zero-rate tail simply never delivers;
* HTTP/1.1-style flows, one outstanding request per flow;
* a throughput-driven bitrate ladder: after every video segment the
  player picks the highest rung, up to the stream's nominal resolution,
  whose bitrate fits 70 % of the measured throughput;
* a player that requests the next segment whenever
  ``buffer + in-flight + segment <= target`` (at most one segment in
  flight), starts playback once ``Buf_min`` seconds are buffered, drains in
  real time, stalls at zero and resumes as soon as the next video segment
  lands.

For live profiles segment ``i`` becomes available at
``(i - burst + 1) * period`` (the first ``burst`` segments at once), with
±5 % jitter unless the stream is generated jitter-free.

Every event time lies on the microsecond grid, which is also the trace
resolution, so ground truth is directly comparable to what a passive
observer reconstructs from the packets.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from ..packets import StreamKind, Provider
from .profiles import ConditionerSchedule, ProviderProfile, conditioner_preset, resolution_bin
from .trace import FlowSpec, Trace, hello_bytes

__all__ = ["GroundTruth", "Link", "simulate_stream", "MSS", "HEADER_BYTES"]

MSS = 1400
HEADER_BYTES = 54
TIMELINE_STEP = 0.1
ACK_EVERY = 16


def _us(t):
    """Snap a time (scalar or array) to the microsecond grid."""
    return np.rint(np.asarray(t, dtype=np.float64) * 1e6) / 1e6


def _us_ceil(t: float) -> float:
    return math.ceil(t * 1e6 - 1e-3) / 1e6


class Link:
    """Work-conserving FIFO with a piecewise-constant service rate."""

    def __init__(self, times: np.ndarray, rates: np.ndarray):
        self.times = np.asarray(times, dtype=np.float64)
        self.rates = np.asarray(rates, dtype=np.float64)
        seg = np.diff(self.times) * self.rates[:-1]
        self.cum = np.concatenate(([0.0], np.cumsum(seg)))
        self.served = 0.0  # cumulative bits already scheduled

    def capacity_until(self, t: float) -> float:
        j = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.cum[j] + self.rates[j] * (t - self.times[j])

    def time_at(self, y: np.ndarray) -> np.ndarray:
        j = np.maximum(np.searchsorted(self.cum, y, side="left") - 1, 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.times[j] + (y - self.cum[j]) / self.rates[j]
        return np.where(np.isnan(out), np.inf, out)

    def transmit(self, arrival: float, bits: np.ndarray) -> np.ndarray:
        """Departure times of a burst enqueued at ``arrival``."""
        start = max(self.capacity_until(arrival), self.served)
        targets = start + np.cumsum(bits, dtype=np.float64)
        self.served = float(targets[-1])
        return self.time_at(targets)


@dataclass
class GroundTruth:
    provider: str
    kind: str
    mode: str
    resolution: str
    seg_dur: float
    buf_min: float
    duration: float
    buffer_health: np.ndarray  # one value per 100 ms from t = 0
    stall_intervals: list[tuple[float, float]]
    segment_arrivals: list[tuple[float, float]]  # (time, buffer just after crediting)
    chunk_media: list[tuple[int, float, str]]  # (flow index, request time, media)
    playback_start: float | None = None
    seek_times: list[float] = field(default_factory=list)
    resolution_timeline: list[tuple[float, str]] = field(default_factory=list)  # (arrival, rung) changes

    @property
    def resolution_bin(self) -> str:
        return resolution_bin(self.resolution)

    def resolution_at(self, t: float) -> str:
        """Rung of the most recent video segment delivered by time ``t``."""
        current = self.resolution_timeline[0][1] if self.resolution_timeline else self.resolution
        for when, res in self.resolution_timeline:
            if when > t:
                break
            current = res
        return current

    @property
    def label(self) -> dict:
        return {"provider": self.provider, "kind": self.kind, "mode": self.mode}

    def stall_windows(self, width: float = 5.0) -> np.ndarray:
        """Boolean flag per ``width``-second window: does a stall touch it?"""
        from ..qoe import interval_windows

        return interval_windows(self.stall_intervals, self.duration, width)

    def to_dict(self) -> dict:
        return {
            "provider": self.provider,
            "kind": self.kind,
            "mode": self.mode,
            "resolution": self.resolution,
            "resolution_bin": self.resolution_bin,
            "seg_dur": self.seg_dur,
            "buf_min": self.buf_min,
            "duration": self.duration,
            "playback_start": self.playback_start,
            "buffer_health": [round(float(b), 6) for b in self.buffer_health],
            "stall_intervals": [list(iv) for iv in self.stall_intervals],
            "segment_arrivals": [list(a) for a in self.segment_arrivals],
            "chunk_media": [list(c) for c in self.chunk_media],
            "seek_times": list(self.seek_times),
            "resolution_timeline": [list(r) for r in self.resolution_timeline],
        }


# event kinds, ordered for deterministic tie-breaking
_READY, _DONE, _AVAIL, _WAKE, _SEEK, _MANIFEST = range(6)


class _Simulation:
    def __init__(self, profile: ProviderProfile, conditioner: ConditionerSchedule, duration: float,
                 seed: int, jitter: bool, client_ip: str | None, resolution: str | None, abr: bool):
        self.p = profile
        self.duration = float(duration)
        self.jitter = jitter
        rng = self.rng = np.random.default_rng(seed)
        self.link = Link(*conditioner.schedule(self.duration))
        self.rtt = float(_us(rng.uniform(0.01, 0.06)))
        self.resolution = resolution or profile.resolutions[int(rng.integers(len(profile.resolutions)))]
        if self.resolution not in profile.video_chunk_bytes_by_resolution:
            raise ValueError(f"{self.resolution!r} is not a rung of this profile")
        ladder = profile.resolutions
        self.max_rung = ladder.index(self.resolution)
        self.rung = self.max_rung
        content = rng.normal(0.0, profile.content_sigma.get(self.resolution, 0.0))
        self.medians = [profile.video_chunk_bytes_by_resolution[r][0] * math.exp(content) for r in ladder]
        self.sigma = profile.video_chunk_bytes_by_resolution[self.resolution][1]
        self.abr = abr
        self.res_timeline: list[tuple[float, str]] = []
        self._video_req: tuple[float, int] = (0.0, 0)
        self.seg = float(profile.segment_period)
        self.live = profile.kind is StreamKind.LIVE

        # packet columns, appended in generation order (ties keep this order)
        self._cols: list[tuple[np.ndarray, int, bool, np.ndarray, bool]] = []
        self.chunk_media: list[tuple[int, float, str]] = []

        self.flows = self._make_flows(seed, client_ip)
        n_media = profile.n_flows
        self.ready = [False] * len(self.flows)
        self.media_flows = list(range(n_media))

        # player
        self.buffer = 0.0
        self.playing = False
        self.started = False
        self.t_last = 0.0
        self.downloaded = 0.0
        self.played = 0.0
        self.discarded = 0.0
        self.next_seg = 0
        self.inflight: int | None = None
        self.pending: set[str] = set()
        self.open_stall: float | None = None
        self.stalls: list[tuple[float, float]] = []
        self.arrivals: list[tuple[float, float]] = []
        self.timeline: list[tuple[float, float, bool]] = [(0.0, 0.0, False)]
        self.playback_start: float | None = None
        self.seeks: list[float] = []
        self._avail: list[float] = []
        self._avail_pending = -1
        self._wake_at = -1.0

        self._events: list = []
        self._seq = 0

    # -- setup ------------------------------------------------------------
    def _make_flows(self, seed: int, client_ip: str | None) -> list[FlowSpec]:
        rng = self.rng
        p = self.p
        if client_ip is None:
            k = seed % (254 * 254 * 254)
            client_ip = f"10.{k // 64516 + 1}.{(k // 254) % 254 + 1}.{k % 254 + 1}"
        label = p.label
        flows = []
        base_port = int(rng.integers(40000, 60000))
        if p.provider is Provider.TWITCH:
            server = f"52.223.{rng.integers(1, 255)}.{rng.integers(1, 255)}"
            sni = p.sni.format(tag="".join(rng.choice(list("0123456789abcdef"), 6)))
        else:
            server = f"173.194.{rng.integers(1, 255)}.{rng.integers(1, 255)}"
            host = "".join(rng.choice(list("abcdefghijklmnopqrstuvwxyz0123456789"), 8))
            sni = p.sni.format(tag=int(rng.integers(1, 9)), host=host)
        for i in range(p.n_flows):
            flows.append(FlowSpec(client_ip, server, base_port + i, 443, "tcp", sni, label))
        if p.manifest_flow:
            weaver = f"45.113.{rng.integers(1, 255)}.{rng.integers(1, 255)}"
            flows.append(FlowSpec(client_ip, weaver, base_port + p.n_flows, 443, "tcp",
                                  "video-weaver.fra05.hls.ttv.net", label))
        return flows

    # -- packets ----------------------------------------------------------
    def _emit(self, ts, flow: int, up: bool, payload, hello: bool = False) -> None:
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        payload = np.broadcast_to(np.asarray(payload, dtype=np.int32), ts.shape)
        self._cols.append((ts, flow, up, payload, hello))

    def _send(self, t: float, flow: int, size: int) -> float:
        """Server burst of ``size`` payload bytes enqueued at ``t``; returns
        the arrival of the last packet (inf if never delivered)."""
        n = max(1, -(-size // MSS))
        pay = np.full(n, MSS, dtype=np.int32)
        pay[-1] = size - MSS * (n - 1)
        dep = _us(self.link.transmit(t, (pay + HEADER_BYTES) * 8.0))
        self._emit(dep, flow, False, pay)
        acks = dep[ACK_EVERY - 1 :: ACK_EVERY]
        if len(acks):
            self._emit(acks, flow, True, 0)
        return float(dep[-1])

    def _request(self, t: float, flow: int, media: str, size: int, req_len: int) -> float:
        self._emit(t, flow, True, req_len)
        self.chunk_media.append((flow, t, media))
        arrive = float(_us(t + self.rtt))
        self._emit(arrive, flow, False, 0)  # server ACK
        return self._send(arrive, flow, size)

    def _open_flow(self, t0: float, flow: int) -> None:
        rng = self.rng
        rtt = self.rtt
        t1 = float(_us(t0 + rtt))
        self._emit(t0, flow, True, 0)  # SYN
        self._emit(t1, flow, False, 0)  # SYN-ACK
        self._emit(t1, flow, True, 0)  # ACK
        self._emit(t1, flow, True, len(hello_bytes(self.flows[flow].sni)), hello=True)
        self.chunk_media.append((flow, t1, "handshake"))
        t_sh = self._send(float(_us(t1 + rtt)), flow, int(rng.integers(3000, 4001)))
        if math.isfinite(t_sh):
            self._emit(t_sh, flow, True, int(rng.integers(80, 101)))  # Finished
            self.chunk_media.append((flow, t_sh, "handshake"))
            self._push(t_sh, _READY, flow)

    # -- events -----------------------------------------------------------
    def _push(self, t: float, kind: int, data=None) -> None:
        if t <= self.duration:
            self._seq += 1
            heapq.heappush(self._events, (t, kind, self._seq, data))

    def run(self) -> tuple[Trace, GroundTruth]:
        p = self.p
        self._open_flow(0.0, 0)
        for f in range(1, len(self.flows)):
            self._open_flow(float(_us(self.rng.uniform(0.001, 0.02))), f)
        if not self.live and self.jitter and p.trick_play and self.rng.random() < p.trick_play:
            self._push(float(_us(self.rng.uniform(20.0, max(20.0, self.duration - 15.0)))), _SEEK)
        while self._events:
            t, kind, _, data = heapq.heappop(self._events)
            self._advance(t)
            if kind == _READY:
                self.ready[data] = True
                if p.manifest_flow and data == len(self.flows) - 1:
                    self._push(t, _MANIFEST)
            elif kind == _DONE:
                self._done(t, *data)
            elif kind == _SEEK:
                self._seek(t)
            elif kind == _MANIFEST:
                self._request(t, data if data is not None else len(self.flows) - 1, "manifest",
                              int(self.rng.integers(1200, 2600)), int(self.rng.integers(380, 461)))
                nxt = t + self.seg * (1.0 + (self.rng.uniform(-0.05, 0.05) if self.jitter else 0.0))
                self._push(float(_us(nxt)), _MANIFEST)
            self._try_request(t)
        self._advance(self.duration)
        if self.open_stall is not None:
            self.stalls.append((self.open_stall, self.duration))
            self.open_stall = None
        return self._trace(), self._truth()

    def _advance(self, t: float) -> None:
        if self.playing:
            dt = t - self.t_last
            if dt > self.buffer:
                stall_at = self.t_last + self.buffer
                self.played += self.buffer
                self.buffer = 0.0
                self.playing = False
                self.open_stall = stall_at
                self.timeline.append((stall_at, 0.0, False))
            else:
                self.buffer -= dt
                self.played += dt
        self.t_last = t
        expected = self.downloaded - self.played - self.discarded
        assert abs(self.buffer - expected) < 1e-6, "player buffer accounting drifted"
        assert self.buffer >= 0.0

    def _video_size(self) -> int:
        return int(round(self.medians[self.rung] * math.exp(self.rng.normal(0.0, self.sigma))))

    def _video_request(self, t: float, flow: int) -> float:
        size = self._video_size()
        self._video_req = (t, size)
        return self._request(t, flow, "video", size, self._req_len("video"))

    def _adapt(self, t: float) -> None:
        """Throughput rule: highest rung (up to the nominal one) whose median
        bitrate fits in 70 % of the last segment's download throughput."""
        t_req, size = self._video_req
        if not self.abr or t <= t_req:
            return
        budget = 0.7 * size * 8.0 / (t - t_req)
        rung = 0
        for k in range(self.max_rung + 1):
            if self.medians[k] * 8.0 / self.seg <= budget:
                rung = k
        self.rung = rung

    def _audio_size(self) -> int:
        lo, hi = self.p.audio_chunk_bytes
        return int(self.rng.uniform(lo, hi))

    def _req_len(self, media: str) -> int:
        lo, hi = self.p.request_len_audio if media == "audio" else self.p.request_len_video
        return int(self.rng.integers(lo, hi + 1))

    def _avail_time(self, i: int) -> float:
        if not self.live:
            return 0.0
        burst = self.p.startup_burst_segments
        while len(self._avail) <= i:
            k = len(self._avail)
            base = max(0, k - burst + 1) * self.seg
            if k >= burst and self.jitter:
                base += self.rng.uniform(-0.05, 0.05) * self.seg
            self._avail.append(float(_us(base)))
        return self._avail[i]

    def _try_request(self, t: float) -> None:
        if self.inflight is not None or not all(self.ready[f] for f in self.media_flows):
            return
        i = self.next_seg
        avail = self._avail_time(i)
        if avail > t:
            if self._avail_pending != i:
                self._avail_pending = i
                self._push(avail, _AVAIL)
            return
        excess = self.buffer + self.seg - self.p.buffer_target
        if excess > 1e-6:
            if self.playing:
                wake = _us_ceil(t + excess)
                if not self.live and self.jitter:
                    wake = float(_us(wake + self.rng.uniform(0.0, 0.05) * self.seg))
                if wake != self._wake_at:
                    self._wake_at = wake
                    self._push(wake, _WAKE)
            return
        self._issue(t, i)

    def _issue(self, t: float, i: int) -> None:
        p = self.p
        self.inflight = i
        if p.provider is Provider.TWITCH:
            if p.audio_separate:
                self.pending = {"audio"}
                done = self._request(t, 0, "audio", self._audio_size(), self._req_len("audio"))
                self._push_done(done, 0, "audio")
            else:
                self.pending = {"video"}
                done = self._video_request(t, 0)
                self._push_done(done, 0, "video")
            return
        order = self.rng.permutation(2)
        a_flow, v_flow = int(order[0]), int(order[1])
        self.pending = {"audio", "video"}
        v_done = self._video_request(t, v_flow)
        a_done = self._request(t, a_flow, "audio", self._audio_size(), self._req_len("audio"))
        self._push_done(v_done, v_flow, "video")
        self._push_done(a_done, a_flow, "audio")

    def _push_done(self, t: float, flow: int, media: str) -> None:
        if math.isfinite(t):
            self._push(t, _DONE, (flow, media))

    def _done(self, t: float, flow: int, media: str) -> None:
        if media == "manifest":
            return
        self.pending.discard(media)
        if media == "video":
            self.buffer += self.seg
            self.downloaded += self.seg
            if not self.playing:
                if self.started or self.buffer >= self.p.buf_min - 1e-9:
                    self.playing = True
                    if not self.started:
                        self.started = True
                        self.playback_start = t
                    if self.open_stall is not None:
                        self.stalls.append((self.open_stall, t))
                        self.open_stall = None
            self.arrivals.append((t, self.buffer))
            res = self.p.resolutions[self.rung]
            if not self.res_timeline or self.res_timeline[-1][1] != res:
                self.res_timeline.append((t, res))
            self._adapt(t)
            self.timeline.append((t, self.buffer, self.playing))
        elif self.p.provider is Provider.TWITCH and self.p.audio_separate:
            self.pending = {"video"}
            v_done = self._video_request(t, flow)
            self._push_done(v_done, flow, "video")
        if not self.pending:
            self.inflight = None
            self.next_seg += 1

    def _seek(self, t: float) -> None:
        self.seeks.append(t)
        self.discarded += self.buffer
        self.buffer = 0.0
        if self.playing:
            self.playing = False
            self.open_stall = t
        self.timeline.append((t, 0.0, False))

    # -- outputs ----------------------------------------------------------
    def _trace(self) -> Trace:
        cols = self._cols
        ts = np.concatenate([c[0] for c in cols])
        flow = np.concatenate([np.full(len(c[0]), c[1], dtype=np.int32) for c in cols])
        up = np.concatenate([np.full(len(c[0]), c[2], dtype=bool) for c in cols])
        payload = np.concatenate([c[3] for c in cols]).astype(np.int32)
        hello = np.concatenate([np.full(len(c[0]), c[4], dtype=bool) for c in cols])
        keep = ts <= self.duration
        order = np.argsort(ts[keep], kind="stable")
        ts, flow, up, payload, hello = (a[keep][order] for a in (ts, flow, up, payload, hello))
        return Trace(self.flows, ts, flow, up, payload, payload + HEADER_BYTES, hello)

    def _truth(self) -> GroundTruth:
        tl = self.timeline
        t0 = np.array([r[0] for r in tl])
        b0 = np.array([r[1] for r in tl])
        pl = np.array([r[2] for r in tl])
        grid = np.arange(0, int(round(self.duration / TIMELINE_STEP)) + 1) * TIMELINE_STEP
        j = np.searchsorted(t0, grid, side="right") - 1
        health = np.where(pl[j], np.maximum(b0[j] - (grid - t0[j]), 0.0), b0[j])
        p = self.p
        return GroundTruth(
            provider=p.provider.value,
            kind=p.kind.value,
            mode=p.mode,
            resolution=self.resolution,
            seg_dur=self.seg,
            buf_min=float(p.buf_min),
            duration=self.duration,
            buffer_health=health,
            stall_intervals=self.stalls,
            segment_arrivals=self.arrivals,
            chunk_media=self.chunk_media,
            playback_start=self.playback_start,
            seek_times=self.seeks,
            resolution_timeline=self.res_timeline,
        )


def simulate_stream(profile: ProviderProfile, conditioner: ConditionerSchedule | None = None,
                    duration: float = 120.0, seed: int = 0, *, jitter: bool = True,
                    client_ip: str | None = None, resolution: str | None = None,
                    abr: bool = True) -> tuple[Trace, GroundTruth]:
    """Simulate one viewing session and return its packets plus ground truth.

    ``jitter=False`` removes live-edge and request-timing jitter and
    trick-play; combine it with the ``none`` conditioner for a perfectly
    regular stream. ``resolution`` is the nominal (highest) rung; with
    ``abr`` the player steps down when throughput cannot sustain it.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if conditioner is None:
        conditioner = conditioner_preset("default", seed)
    return _Simulation(profile, conditioner, duration, seed, jitter, client_ip, resolution, abr).run()

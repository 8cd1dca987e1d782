"""Per-flow telemetry: 500 ms request counters and chunk detection.

A chunk is everything the server sends between two consecutive request
packets of one flow. Bins of the request counter are anchored at the flow's
first packet and computed on the microsecond grid so that shifting a trace
by a multiple of half a second shifts the bins exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .packets import (
    REQUEST_PAYLOAD_THRESHOLD,
    SNI_MAX_BYTES,
    SNI_MAX_PACKETS,
    UNKNOWN_TAG,
    Direction,
    FlowKey,
    Packet,
    ProviderTag,
    extract_sni,
    match_provider,
    parse_client_hello_sni,
)

__all__ = [
    "BIN_WIDTH",
    "Chunk",
    "ChunkBuilder",
    "FlowRecord",
    "FlowTable",
    "RequestSeries",
    "WindowNotReady",
    "chunk_record",
    "detect_chunks",
    "window_series",
]

BIN_WIDTH = 0.5
_BIN_US = 500_000
WINDOW_BINS = 60


class WindowNotReady(LookupError):
    """Raised when a request series has not accumulated enough bins yet."""


@dataclass(frozen=True, slots=True)
class Chunk:
    request_time: float
    request_packet_length: int
    chunk_start_time: float
    chunk_end_time: float
    chunk_packets: int
    chunk_bytes: int


def chunk_record(chunk: Chunk, flow: str) -> dict:
    """Export form of a chunk, keyed by the telemetry feature names."""
    return {
        "flow": flow,
        "requestTime": chunk.request_time,
        "requestPacketLength": chunk.request_packet_length,
        "chunkStartTime": chunk.chunk_start_time,
        "chunkEndTime": chunk.chunk_end_time,
        "chunkPackets": chunk.chunk_packets,
        "chunkBytes": chunk.chunk_bytes,
    }


@dataclass(slots=True)
class RequestSeries:
    flow_key: FlowKey | None
    counts: list[int]
    bin_width: float = BIN_WIDTH

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts)


def window_series(rs: RequestSeries | Sequence[int], start_bin: int, length: int = WINDOW_BINS) -> np.ndarray:
    """Return ``length`` consecutive counts starting at ``start_bin``."""
    counts = rs.counts if isinstance(rs, RequestSeries) else rs
    if start_bin < 0 or len(counts) < start_bin + length:
        raise WindowNotReady(f"need {start_bin + length} bins, have {len(counts)}")
    return np.asarray(counts[start_bin : start_bin + length], dtype=np.float64)


class ChunkBuilder:
    """Incremental chunk demarcation for one flow."""

    __slots__ = ("chunks", "_req_t", "_req_len", "_start", "_end", "_pkts", "_bytes")

    def __init__(self):
        self.chunks: list[Chunk] = []
        self._req_t: float | None = None
        self._req_len = 0
        self._start = 0.0
        self._end = 0.0
        self._pkts = 0
        self._bytes = 0

    def request(self, ts: float, length: int) -> None:
        if self._req_t is not None:
            self._close()
        self._req_t = ts
        self._req_len = length
        self._pkts = 0
        self._bytes = 0

    def data(self, ts: float, length: int) -> None:
        if self._req_t is None or length <= 0:
            return
        if self._pkts == 0:
            self._start = ts
        self._end = ts
        self._pkts += 1
        self._bytes += length

    @property
    def open_request_time(self) -> float | None:
        """Request time of the chunk still collecting data, if any."""
        return self._req_t

    def _close(self) -> None:
        if self._pkts:
            c = Chunk(self._req_t, self._req_len, self._start, self._end, self._pkts, self._bytes)
        else:
            c = Chunk(self._req_t, self._req_len, self._req_t, self._req_t, 0, 0)
        self.chunks.append(c)

    def finish(self) -> list[Chunk]:
        if self._req_t is not None:
            self._close()
            self._req_t = None
        return self.chunks


def detect_chunks(packets: Iterable[Packet]) -> list[Chunk]:
    """Demarcate the chunks of one flow's packets (timestamp order)."""
    builder = ChunkBuilder()
    for p in packets:
        if p.direction is Direction.UP:
            if p.payload_len > REQUEST_PAYLOAD_THRESHOLD:
                builder.request(p.timestamp, p.payload_len)
        else:
            builder.data(p.timestamp, p.payload_len)
    return builder.finish()


@dataclass(slots=True)
class FlowRecord:
    flow_key: FlowKey
    provider_tag: ProviderTag
    first_ts: float
    last_ts: float
    request_series: RequestSeries
    chunks: list[Chunk]
    bytes_down: int
    request_times: list[float] = field(default_factory=list)
    packets: int = 0


class _FlowState:
    __slots__ = (
        "key",
        "first_ts",
        "first_us",
        "last_ts",
        "counts",
        "request_times",
        "builder",
        "bytes_down",
        "packets",
        "tag",
        "hello",
        "hello_pkts",
    )

    def __init__(self, key: FlowKey, ts: float):
        self.key = key
        self.first_ts = ts
        self.first_us = round(ts * 1e6)
        self.last_ts = ts
        self.counts: list[int] = []
        self.request_times: list[float] = []
        self.builder = ChunkBuilder()
        self.bytes_down = 0
        self.packets = 0
        self.tag: ProviderTag | None = None if key.protocol == "tcp" else UNKNOWN_TAG
        self.hello: list[Packet] = []
        self.hello_pkts = 0

    def n_bins(self) -> int:
        return (round(self.last_ts * 1e6) - self.first_us) // _BIN_US + 1

    def finalize(self) -> FlowRecord:
        counts = self.counts
        n = self.n_bins()
        if len(counts) < n:
            counts.extend([0] * (n - len(counts)))
        tag = self.tag
        if tag is None:
            tag = extract_sni(self.hello) if self.hello else UNKNOWN_TAG
        return FlowRecord(
            flow_key=self.key,
            provider_tag=tag,
            first_ts=self.first_ts,
            last_ts=self.last_ts,
            request_series=RequestSeries(self.key, counts),
            chunks=self.builder.finish(),
            bytes_down=self.bytes_down,
            request_times=self.request_times,
            packets=self.packets,
        )


def _early_tag(hello: list[Packet]) -> ProviderTag | None:
    """Tag as soon as the captured ClientHello bytes are complete (None: wait)."""
    stream = b"".join(p.payload for p in hello)
    if not stream:
        return None
    if len(stream) > SNI_MAX_BYTES:
        return UNKNOWN_TAG
    try:
        complete, sni = parse_client_hello_sni(stream)
    except ValueError:
        return UNKNOWN_TAG
    if not complete:
        return None
    return match_provider(sni) if sni else UNKNOWN_TAG


class FlowTable:
    """Flow table with the two telemetry functions attached to every flow.

    Flows idle for longer than ``idle_timeout`` seconds are finalized and
    handed to ``on_finalize`` (or kept in :attr:`finished`). A packet that
    goes back in time relative to its flow is dropped and counted.
    """

    def __init__(self, idle_timeout: float = 120.0, on_finalize: Callable[[FlowRecord], None] | None = None):
        self.idle_timeout = idle_timeout
        self.flows: dict[FlowKey, _FlowState] = {}
        self.finished: list[FlowRecord] = []
        self.dropped = 0
        self._emit = on_finalize or self.finished.append
        self._next_sweep = 1.0

    def __len__(self) -> int:
        return len(self.flows)

    def ingest(self, p: Packet) -> None:
        ts = p.timestamp
        if ts >= self._next_sweep:
            self._sweep(ts)
        key = p.flow_key
        st = self.flows.get(key)
        if st is None:
            st = self.flows[key] = _FlowState(key, ts)
        elif ts < st.last_ts:
            self.dropped += 1
            return
        elif ts - st.last_ts > self.idle_timeout:
            self._emit(st.finalize())
            st = self.flows[key] = _FlowState(key, ts)
        st.last_ts = ts
        st.packets += 1
        n = p.payload_len
        if p.direction is Direction.UP:
            if st.tag is None and n:
                if p.sni is not None:
                    st.tag = match_provider(p.sni)
                    st.hello = []
                else:
                    st.hello.append(p)
                    st.hello_pkts += 1
                    tag = _early_tag(st.hello)
                    if tag is not None or st.hello_pkts >= SNI_MAX_PACKETS:
                        st.tag = tag or extract_sni(st.hello)
                        st.hello = []
            if n > REQUEST_PAYLOAD_THRESHOLD:
                b = (round(ts * 1e6) - st.first_us) // _BIN_US
                counts = st.counts
                if b >= len(counts):
                    counts.extend([0] * (b + 1 - len(counts)))
                counts[b] += 1
                st.request_times.append(ts)
                st.builder.request(ts, n)
        else:
            if n:
                st.bytes_down += n
                st.builder.data(ts, n)

    def _sweep(self, now: float) -> None:
        self._next_sweep = now + 1.0
        limit = now - self.idle_timeout
        stale = [k for k, st in self.flows.items() if st.last_ts < limit]
        for k in stale:
            self._emit(self.flows.pop(k).finalize())

    def flush(self) -> list[FlowRecord]:
        """Finalize every open flow and return all finished records."""
        for st in self.flows.values():
            self._emit(st.finalize())
        self.flows.clear()
        return self.finished

    def series_so_far(self, key: FlowKey) -> RequestSeries:
        """Counts of complete bins for a live flow (streaming consumers)."""
        st = self.flows[key]
        n = st.n_bins() - 1
        counts = st.counts[:n] + [0] * max(0, n - len(st.counts))
        return RequestSeries(key, counts)

"""Columnar packet traces and their jsonl / pcap writers."""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import orjson

from ..packets import Direction, FlowKey, Packet, build_client_hello

__all__ = ["FlowSpec", "Trace", "hello_bytes", "merge_traces"]

PCAP_EPOCH = 1_700_000_000
HELLO_SIZE = 517


def hello_bytes(sni: str) -> bytes:
    """The ClientHello a simulated client sends for ``sni``."""
    return build_client_hello(sni, pad_to=HELLO_SIZE)


@dataclass
class FlowSpec:
    """One simulated 5-tuple; ``src`` is the client."""

    src: str
    dst: str
    sport: int
    dport: int
    proto: str = "tcp"
    sni: str | None = None
    label: dict | None = None

    @property
    def key(self) -> FlowKey:
        return FlowKey(self.src, self.dst, self.sport, self.dport, self.proto)


@dataclass
class Trace:
    """Packets as parallel arrays, sorted by timestamp.

    ``hello`` marks ClientHello packets; their payload is the real
    ClientHello for the flow's SNI, so ``payload`` equals its length.
    """

    flows: list[FlowSpec]
    ts: np.ndarray
    flow: np.ndarray
    up: np.ndarray
    payload: np.ndarray
    wire: np.ndarray
    hello: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.hello is None:
            self.hello = np.zeros(len(self.ts), dtype=bool)

    def __len__(self) -> int:
        return len(self.ts)

    @property
    def duration(self) -> float:
        return float(self.ts[-1]) if len(self.ts) else 0.0

    def flow_mask(self, index: int) -> np.ndarray:
        return self.flow == index

    def packets(self) -> Iterator[Packet]:
        keys = [f.key for f in self.flows]
        snis = [f.sni for f in self.flows]
        up, down = Direction.UP, Direction.DOWN
        for t, fi, u, p, w, h in zip(
            self.ts.tolist(), self.flow.tolist(), self.up.tolist(), self.payload.tolist(),
            self.wire.tolist(), self.hello.tolist(),
        ):
            yield Packet(t, keys[fi], up if u else down, p, w, b"", snis[fi] if h else None)

    def labels(self) -> dict[FlowKey, dict]:
        return {f.key: f.label for f in self.flows if f.label is not None}

    # -- writers ----------------------------------------------------------
    def jsonl_lines(self) -> Iterator[bytes]:
        dumps = orjson.dumps
        seen = np.zeros(len(self.flows), dtype=bool)
        for t, fi, u, p, w, h in zip(
            self.ts.tolist(), self.flow.tolist(), self.up.tolist(), self.payload.tolist(),
            self.wire.tolist(), self.hello.tolist(),
        ):
            f = self.flows[fi]
            if u:
                rec = {"ts": t, "src": f.src, "dst": f.dst, "sport": f.sport, "dport": f.dport,
                       "proto": f.proto, "dir": "up", "payload": p, "wire": w}
            else:
                rec = {"ts": t, "src": f.dst, "dst": f.src, "sport": f.dport, "dport": f.sport,
                       "proto": f.proto, "dir": "down", "payload": p, "wire": w}
            if h and f.sni:
                rec["sni"] = f.sni
            if not seen[fi]:
                seen[fi] = True
                if f.label is not None:
                    rec["label"] = f.label
            yield dumps(rec)

    def write_jsonl(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "wb") as fh:
            for line in self.jsonl_lines():
                fh.write(line)
                fh.write(b"\n")
        return path

    def write_pcap(self, path: str | Path) -> Path:
        """Write an Ethernet/IPv4 libpcap file (microsecond timestamps).

        Frames are captured up to the transport header; ClientHello packets
        additionally carry their full TLS record so SNI tagging works.
        """
        path = Path(path)
        rec = struct.Struct("<IIII")
        eth_up = bytes(6) + bytes.fromhex("020000000001") + b"\x08\x00"
        eth_down = bytes.fromhex("020000000001") + bytes(6) + b"\x08\x00"
        addrs = [(socket.inet_aton(f.src), socket.inet_aton(f.dst)) for f in self.flows]
        hellos = {i: hello_bytes(f.sni) for i, f in enumerate(self.flows) if f.sni}
        seqs = [[1000, 5000] for _ in self.flows]
        with open(path, "wb") as fh:
            fh.write(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1))
            us = np.rint(self.ts * 1e6).astype(np.int64) + PCAP_EPOCH * 1_000_000
            for t, fi, u, p, h in zip(us.tolist(), self.flow.tolist(), self.up.tolist(),
                                      self.payload.tolist(), self.hello.tolist()):
                f = self.flows[fi]
                a_cli, a_srv = addrs[fi]
                body = hellos.get(fi, b"") if h else b""
                if u:
                    eth, s_ip, d_ip, sp, dp = eth_up, a_cli, a_srv, f.sport, f.dport
                    seq = seqs[fi][0]
                    seqs[fi][0] = (seq + p) & 0xFFFFFFFF
                else:
                    eth, s_ip, d_ip, sp, dp = eth_down, a_srv, a_cli, f.dport, f.sport
                    seq = seqs[fi][1]
                    seqs[fi][1] = (seq + p) & 0xFFFFFFFF
                proto = 6 if f.proto == "tcp" else 17
                if proto == 6:
                    l4 = struct.pack(">HHIIBBHHH", sp, dp, seq, 0, 5 << 4, 0x18 if p else 0x10, 65535, 0, 0)
                else:
                    l4 = struct.pack(">HHHH", sp, dp, 8 + p, 0)
                ip = struct.pack(">BBHHHBBH4s4s", 0x45, 0, 20 + len(l4) + p, 0, 0x4000, 64, proto, 0, s_ip, d_ip)
                frame = eth + ip + l4 + body[:p]
                orig = 14 + 20 + len(l4) + p
                fh.write(rec.pack(t // 1_000_000, t % 1_000_000, len(frame), orig))
                fh.write(frame)
        return path


def merge_traces(traces: Sequence[Trace], offsets: Sequence[float] | None = None) -> Trace:
    """Interleave several traces on one timeline (offsets in seconds, µs grid)."""
    offsets = offsets or [0.0] * len(traces)
    flows: list[FlowSpec] = []
    parts = []
    for tr, off in zip(traces, offsets):
        base = len(flows)
        flows.extend(tr.flows)
        parts.append((np.rint((tr.ts + off) * 1e6) / 1e6, tr.flow + base, tr))
    ts = np.concatenate([p[0] for p in parts])
    order = np.argsort(ts, kind="stable")
    cat = lambda name: np.concatenate([getattr(p[2], name) for p in parts])[order]  # noqa: E731
    return Trace(
        flows=flows,
        ts=ts[order],
        flow=np.concatenate([p[1] for p in parts])[order].astype(np.int32),
        up=cat("up"),
        payload=cat("payload"),
        wire=cat("wire"),
        hello=cat("hello"),
    )

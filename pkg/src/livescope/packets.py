"""Packet records, trace readers and provider tagging.

Two trace formats are understood: classic libpcap files (Ethernet or raw IP
link types, IPv4/IPv6, TCP/UDP) and a portable JSON-lines format with one
packet per line::

    {"ts": 0.25, "src": "10.0.0.2", "dst": "52.1.1.1", "sport": 50000,
     "dport": 443, "proto": "tcp", "dir": "up", "payload": 517, "wire": 571,
     "sni": "vod-secure.twitch.com", "label": {"provider": "twitch",
     "kind": "vod", "mode": "n/a"}}

``src``/``dst`` are the packet's own source and destination; ``dir`` says
whether the packet travels from the client (``up``) or towards it
(``down``). Ground-truth labels are collected per flow on the reader and are
never attached to :class:`Packet`.
"""

from __future__ import annotations

import enum
import fnmatch
import math
import socket
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import orjson

__all__ = [
    "Direction",
    "FlowKey",
    "Packet",
    "Provider",
    "ProviderTag",
    "StreamKind",
    "TraceReader",
    "REQUEST_PAYLOAD_THRESHOLD",
    "build_client_hello",
    "classify_request_packet",
    "extract_sni",
    "match_provider",
    "parse_client_hello_sni",
    "read_trace",
]

#: Upstream packets carrying more than this many payload bytes are requests.
REQUEST_PAYLOAD_THRESHOLD = 26

SNI_MAX_PACKETS = 8
SNI_MAX_BYTES = 16 * 1024


class Direction(enum.Enum):
    UP = "up"
    DOWN = "down"


class Provider(enum.Enum):
    TWITCH = "twitch"
    YOUTUBE = "youtube"
    UNKNOWN = "unknown"


class StreamKind(enum.Enum):
    LIVE = "live"
    VOD = "vod"


class FlowKey(NamedTuple):
    """Client-oriented 5-tuple: ``src`` is always the client side."""

    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: str  # "tcp" or "udp"

    def __str__(self) -> str:
        return f"{self.src_ip}:{self.src_port}-{self.dst_ip}:{self.dst_port}/{self.protocol}"


@dataclass(frozen=True, slots=True)
class Packet:
    """One captured frame, normalized.

    ``payload`` holds whatever transport payload bytes were captured (pcap
    only, possibly truncated); ``sni`` is the server name when the jsonl
    record carried one.
    """

    timestamp: float
    flow_key: FlowKey
    direction: Direction
    payload_len: int
    total_len: int
    payload: bytes = b""
    sni: str | None = None


@dataclass(frozen=True, slots=True)
class ProviderTag:
    provider: Provider = Provider.UNKNOWN
    stream_hint: StreamKind | None = None
    sni: str | None = None


UNKNOWN_TAG = ProviderTag()

# (glob, provider, hint); first match wins
SNI_PATTERNS: tuple[tuple[str, Provider, StreamKind | None], ...] = (
    ("vod-secure.twitch.com", Provider.TWITCH, StreamKind.VOD),
    ("video-edge*.abs.hls.ttv.net", Provider.TWITCH, StreamKind.LIVE),
    ("*.googlevideo.com", Provider.YOUTUBE, None),
)


def classify_request_packet(p: Packet) -> bool:
    return p.direction is Direction.UP and p.payload_len > REQUEST_PAYLOAD_THRESHOLD


def match_provider(sni: str | None) -> ProviderTag:
    if not sni:
        return UNKNOWN_TAG
    name = sni.strip().lower().rstrip(".")
    for pattern, provider, hint in SNI_PATTERNS:
        if fnmatch.fnmatchcase(name, pattern):
            return ProviderTag(provider, hint, name)
    return ProviderTag(Provider.UNKNOWN, None, name)


# ---------------------------------------------------------------------------
# TLS ClientHello

_TLS_HANDSHAKE = 0x16
_CLIENT_HELLO = 0x01
_EXT_SERVER_NAME = 0x0000


def build_client_hello(sni: str, *, random_bytes: bytes = bytes(32), session_id: bytes = b"",
                       pad_to: int | None = None) -> bytes:
    """Serialize a minimal TLS 1.2-framed ClientHello carrying ``sni``.

    ``pad_to`` appends a padding extension so the record reaches that size,
    as browsers do.
    """
    host = sni.encode("ascii")
    server_name = struct.pack(">BH", 0, len(host)) + host
    sni_ext_body = struct.pack(">H", len(server_name)) + server_name
    extensions = struct.pack(">HH", _EXT_SERVER_NAME, len(sni_ext_body)) + sni_ext_body
    # supported_groups, ec_point_formats, signature_algorithms, supported_versions
    extensions += bytes.fromhex("000a000800060017001d0018")
    extensions += bytes.fromhex("000b00020100")
    extensions += bytes.fromhex("000d00080006040305030804")
    extensions += bytes.fromhex("002b00050403040303")
    ciphers = bytes.fromhex("13011302c02bc02fc02cc030")
    if pad_to is not None:
        # record header 5 + handshake header 4 + fixed body fields + padding ext header 4
        fixed = 5 + 4 + 2 + 32 + 1 + len(session_id) + 2 + len(ciphers) + 2 + 2 + len(extensions) + 4
        extensions += struct.pack(">HH", 0x0015, max(0, pad_to - fixed)) + bytes(max(0, pad_to - fixed))
    body = (
        b"\x03\x03"
        + random_bytes
        + struct.pack(">B", len(session_id))
        + session_id
        + struct.pack(">H", len(ciphers))
        + ciphers
        + b"\x01\x00"
        + struct.pack(">H", len(extensions))
        + extensions
    )
    handshake = struct.pack(">B", _CLIENT_HELLO) + len(body).to_bytes(3, "big") + body
    return struct.pack(">BHH", _TLS_HANDSHAKE, 0x0301, len(handshake)) + handshake


def _handshake_bytes(stream: bytes) -> bytes | None:
    """Concatenate handshake-record fragments from the start of ``stream``.

    Returns None when the stream does not start with a handshake record.
    """
    out = bytearray()
    pos = 0
    while pos + 5 <= len(stream):
        ctype, _version, length = struct.unpack_from(">BHH", stream, pos)
        if ctype != _TLS_HANDSHAKE:
            break
        out += stream[pos + 5 : pos + 5 + length]
        pos += 5 + length
    if pos == 0:
        return None
    return bytes(out)


def parse_client_hello_sni(stream: bytes) -> tuple[bool, str | None]:
    """Parse the server_name from a (possibly partial) client byte stream.

    Returns ``(complete, sni)``. ``complete`` is False when more bytes are
    needed to finish the ClientHello; a complete hello without the extension
    gives ``(True, None)``. Raises ValueError for streams that are not TLS.
    """
    hs = _handshake_bytes(stream)
    if hs is None:
        raise ValueError("not a TLS handshake record")
    if len(hs) < 4:
        return False, None
    if hs[0] != _CLIENT_HELLO:
        raise ValueError("first handshake message is not a ClientHello")
    length = int.from_bytes(hs[1:4], "big")
    if len(hs) < 4 + length:
        return False, None
    body = hs[4 : 4 + length]
    try:
        pos = 2 + 32
        pos += 1 + body[pos]
        (n,) = struct.unpack_from(">H", body, pos)
        pos += 2 + n
        pos += 1 + body[pos]
        if pos + 2 > len(body):
            return True, None
        (ext_total,) = struct.unpack_from(">H", body, pos)
        pos += 2
        end = min(len(body), pos + ext_total)
        while pos + 4 <= end:
            ext_type, ext_len = struct.unpack_from(">HH", body, pos)
            pos += 4
            if ext_type == _EXT_SERVER_NAME:
                (list_len,) = struct.unpack_from(">H", body, pos)
                p = pos + 2
                stop = p + list_len
                while p + 3 <= stop:
                    name_type, name_len = struct.unpack_from(">BH", body, p)
                    p += 3
                    if name_type == 0:
                        return True, body[p : p + name_len].decode("ascii", "replace")
                    p += name_len
                return True, None
            pos += ext_len
    except (struct.error, IndexError) as exc:
        raise ValueError("malformed ClientHello") from exc
    return True, None


def extract_sni(packets: Iterable[Packet]) -> ProviderTag:
    """Tag a TCP flow from the SNI of its ClientHello.

    Only the first 8 payload-bearing upstream packets (16 KB) are scanned;
    anything longer falls back to the unknown tag.
    """
    stream = b""
    seen = 0
    for p in packets:
        if p.direction is not Direction.UP or p.payload_len == 0:
            continue
        seen += 1
        if seen > SNI_MAX_PACKETS:
            break
        if p.sni:
            return match_provider(p.sni)
        if not p.payload:
            continue
        stream += p.payload
        if len(stream) > SNI_MAX_BYTES:
            break
        try:
            complete, sni = parse_client_hello_sni(stream)
        except ValueError:
            return UNKNOWN_TAG
        if complete:
            return match_provider(sni) if sni else UNKNOWN_TAG
    return UNKNOWN_TAG


# ---------------------------------------------------------------------------
# trace readers


class TraceReader:
    """Iterate the packets of one trace file in timestamp order.

    Timestamps are rebased so the first record sits at zero. Malformed
    records and records that would go backwards in time are skipped and
    counted in :attr:`skipped`; ``emitted + skipped`` equals the number of
    records in the file.
    """

    def __init__(self, source: str | Path, format: str = "jsonl"):
        if format not in ("jsonl", "pcap"):
            raise ValueError(f"unknown trace format {format!r}")
        self.path = Path(source)
        self.format = format
        self._fh = open(self.path, "rb")  # unreadable file is fatal here
        self.emitted = 0
        self.skipped = 0
        self.out_of_order = 0
        self.labels: dict[FlowKey, dict] = {}
        self._consumed = False

    def __iter__(self) -> Iterator[Packet]:
        if self._consumed:
            raise RuntimeError("trace readers are single-pass")
        self._consumed = True
        gen = self._iter_jsonl() if self.format == "jsonl" else self._iter_pcap()
        try:
            yield from gen
        finally:
            self._fh.close()

    @property
    def records(self) -> int:
        return self.emitted + self.skipped

    # jsonl -------------------------------------------------------------
    def _iter_jsonl(self) -> Iterator[Packet]:
        loads = orjson.loads
        up, down = Direction.UP, Direction.DOWN
        keys: dict[tuple, FlowKey] = {}
        t0 = None
        last = -math.inf
        labels = self.labels
        for line in self._fh:
            if not line.strip():
                continue
            try:
                rec = loads(line)
                ts = float(rec["ts"])
                d = rec["dir"]
                payload = rec["payload"]
                wire = rec["wire"]
                proto = rec["proto"]
                src, dst, sport, dport = rec["src"], rec["dst"], rec["sport"], rec["dport"]
                if (
                    not math.isfinite(ts)
                    or type(payload) is not int
                    or type(wire) is not int
                    or not 0 <= payload <= wire
                    or proto not in ("tcp", "udp")
                    or type(sport) is not int
                    or type(dport) is not int
                    or not (0 <= sport <= 65535 and 0 <= dport <= 65535)
                ):
                    raise ValueError
                if d == "up":
                    direction = up
                    raw = (src, dst, sport, dport, proto)
                elif d == "down":
                    direction = down
                    raw = (dst, src, dport, sport, proto)
                else:
                    raise ValueError
            except (ValueError, KeyError, TypeError, orjson.JSONDecodeError):
                self.skipped += 1
                continue
            if t0 is None:
                t0 = ts
            if t0:
                ts = ts - t0
            if ts < last or ts < 0:
                self.skipped += 1
                self.out_of_order += 1
                continue
            last = ts
            key = keys.get(raw)
            if key is None:
                key = keys[raw] = FlowKey(*raw)
            label = rec.get("label")
            if label is not None and key not in labels and isinstance(label, dict):
                labels[key] = label
            sni = rec.get("sni")
            self.emitted += 1
            yield Packet(ts, key, direction, payload, wire, b"", sni if isinstance(sni, str) else None)

    # pcap --------------------------------------------------------------
    def _iter_pcap(self) -> Iterator[Packet]:
        fh = self._fh
        header = fh.read(24)
        if len(header) < 24:
            raise ValueError(f"{self.path}: truncated pcap header")
        magic = header[:4]
        if magic in (b"\xd4\xc3\xb2\xa1", b"\x4d\x3c\xb2\xa1"):
            endian = "<"
        elif magic in (b"\xa1\xb2\xc3\xd4", b"\xa1\xb2\x3c\x4d"):
            endian = ">"
        else:
            raise ValueError(f"{self.path}: not a libpcap file")
        nanos = magic in (b"\x4d\x3c\xb2\xa1", b"\xa1\xb2\x3c\x4d")
        linktype = struct.unpack(endian + "I", header[20:24])[0]
        if linktype not in (1, 101, 228, 229):
            raise ValueError(f"{self.path}: unsupported link type {linktype}")
        rec_hdr = struct.Struct(endian + "IIII")
        scale = 1_000_000_000 if nanos else 1_000_000
        orient: dict[tuple, FlowKey] = {}
        t0 = None
        last = -1
        while True:
            h = fh.read(16)
            if not h:
                break
            if len(h) < 16:
                self.skipped += 1
                break
            sec, frac, caplen, origlen = rec_hdr.unpack(h)
            frame = fh.read(caplen)
            if len(frame) < caplen:
                self.skipped += 1
                break
            ticks = sec * scale + frac
            if nanos:
                ticks = (ticks + 500) // 1000  # keep microsecond resolution
            parsed = _parse_frame(frame, linktype)
            if parsed is None:
                self.skipped += 1
                continue
            src, dst, sport, dport, proto, payload_len, payload = parsed
            if t0 is None:
                t0 = ticks
            rel = ticks - t0
            if rel < last:
                self.skipped += 1
                self.out_of_order += 1
                continue
            last = rel
            fwd = (src, dst, sport, dport, proto)
            key = orient.get(fwd)
            if key is None:
                rev = (dst, src, dport, sport, proto)
                key = orient.get(rev)
                if key is None:
                    key = FlowKey(*fwd)
                    orient[fwd] = key
            direction = Direction.UP if key.src_ip == src and key.src_port == sport else Direction.DOWN
            self.emitted += 1
            yield Packet(rel / 1e6, key, direction, payload_len, max(origlen, payload_len), payload)


def _parse_frame(frame: bytes, linktype: int):
    try:
        if linktype == 1:
            ethertype = struct.unpack_from(">H", frame, 12)[0]
            off = 14
            while ethertype in (0x8100, 0x88A8):
                ethertype = struct.unpack_from(">H", frame, off + 2)[0]
                off += 4
            if ethertype == 0x0800:
                version = 4
            elif ethertype == 0x86DD:
                version = 6
            else:
                return None
        else:
            off = 0
            version = frame[0] >> 4
            if linktype == 228:
                version = 4
            elif linktype == 229:
                version = 6
        if version == 4:
            ihl = (frame[off] & 0x0F) * 4
            total = struct.unpack_from(">H", frame, off + 2)[0]
            proto_num = frame[off + 9]
            src = socket.inet_ntop(socket.AF_INET, frame[off + 12 : off + 16])
            dst = socket.inet_ntop(socket.AF_INET, frame[off + 16 : off + 20])
            l4 = off + ihl
            l4_len = total - ihl
        elif version == 6:
            plen = struct.unpack_from(">H", frame, off + 4)[0]
            proto_num = frame[off + 6]
            src = socket.inet_ntop(socket.AF_INET6, frame[off + 8 : off + 24])
            dst = socket.inet_ntop(socket.AF_INET6, frame[off + 24 : off + 40])
            l4 = off + 40
            l4_len = plen
        else:
            return None
        if proto_num == 6:
            sport, dport = struct.unpack_from(">HH", frame, l4)
            hdr = (frame[l4 + 12] >> 4) * 4
            proto = "tcp"
        elif proto_num == 17:
            sport, dport = struct.unpack_from(">HH", frame, l4)
            hdr = 8
            proto = "udp"
        else:
            return None
    except (struct.error, IndexError, ValueError):
        return None
    payload_len = l4_len - hdr
    if payload_len < 0:
        return None
    return src, dst, sport, dport, proto, payload_len, frame[l4 + hdr : l4 + hdr + payload_len]


def read_trace(source: str | Path, format: str = "jsonl") -> TraceReader:
    """Open a trace for reading; iterate the result to get packets."""
    return TraceReader(source, format)

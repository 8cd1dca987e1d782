"""Per-client sessions and the live/VoD declaration state machine.

A session starts in ``START``; the first window's label moves it to a
"surely" state. A single contrary window only demotes it to the matching
"maybe" state, and the next window decides: agreement with the maybe-state's
origin goes back, two contrary windows in a row switch sides. A label is
declared only while in a surely state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .flowtab import FlowRecord
from .packets import Provider

__all__ = [
    "Declared",
    "Label",
    "Session",
    "SessionKey",
    "SessionState",
    "State",
    "TRANSITIONS",
    "aggregate",
    "declared_label",
    "run_machine",
    "step",
]

SESSION_IDLE = 300.0
_BIN_US = 500_000


class State(enum.Enum):
    START = "Start"
    SURELY_LIVE = "SurelyLive"
    MAYBE_LIVE = "MaybeLive"
    SURELY_VOD = "SurelyVoD"
    MAYBE_VOD = "MaybeVoD"


class Label(enum.Enum):
    LIVE = "live"
    VOD = "vod"


class Declared(enum.Enum):
    LIVE = "live"
    VOD = "vod"
    UNDECLARED = "undeclared"


L, V = Label.LIVE, Label.VOD

TRANSITIONS: dict[tuple[State, Label], State] = {
    (State.START, L): State.SURELY_LIVE,
    (State.START, V): State.SURELY_VOD,
    (State.SURELY_VOD, V): State.SURELY_VOD,
    (State.SURELY_VOD, L): State.MAYBE_VOD,
    (State.MAYBE_VOD, V): State.SURELY_VOD,
    (State.MAYBE_VOD, L): State.SURELY_LIVE,
    (State.SURELY_LIVE, L): State.SURELY_LIVE,
    (State.SURELY_LIVE, V): State.MAYBE_LIVE,
    (State.MAYBE_LIVE, L): State.SURELY_LIVE,
    (State.MAYBE_LIVE, V): State.SURELY_VOD,
}


def step(state: State, label: Label) -> State:
    return TRANSITIONS[(state, label)]


def declared_label(state: State) -> Declared:
    if state is State.SURELY_LIVE:
        return Declared.LIVE
    if state is State.SURELY_VOD:
        return Declared.VOD
    return Declared.UNDECLARED


def run_machine(labels: Iterable[Label], start: State = State.START) -> list[State]:
    """States after each label (same length as ``labels``)."""
    out = []
    s = start
    for lab in labels:
        s = step(s, lab)
        out.append(s)
    return out


@dataclass
class SessionState:
    state: State = State.START
    declared: Declared = Declared.UNDECLARED
    window_history: list[Label] = field(default_factory=list)

    def update(self, label: Label) -> Declared:
        self.state = step(self.state, label)
        self.declared = declared_label(self.state)
        self.window_history.append(label)
        return self.declared


@dataclass(frozen=True)
class SessionKey:
    client_ip: str
    protocol: str

    def __str__(self) -> str:
        return f"{self.client_ip}/{self.protocol}"


@dataclass
class Session:
    """Flows of one viewing session (YouTube: per client; Twitch: per flow)."""

    key: SessionKey
    provider: Provider
    flows: list[FlowRecord]
    name: str

    @property
    def start(self) -> float:
        return min(f.first_ts for f in self.flows)

    @property
    def end(self) -> float:
        return max(f.last_ts for f in self.flows)

    def request_counts(self) -> np.ndarray:
        """500-ms request counts over all member flows, origin = session start.

        Single-flow sessions return the flow's own counter; merged sessions
        re-bin every member request on the session clock.
        """
        if len(self.flows) == 1:
            return np.asarray(self.flows[0].request_series.counts, dtype=np.int64)
        start_us = round(self.start * 1e6)
        n = (round(self.end * 1e6) - start_us) // _BIN_US + 1
        times = np.concatenate([np.asarray(f.request_times, dtype=np.float64) for f in self.flows])
        bins = (np.rint(times * 1e6).astype(np.int64) - start_us) // _BIN_US
        return np.bincount(bins, minlength=n).astype(np.int64)

    def chunks(self):
        out = [c for f in self.flows for c in f.chunks]
        out.sort(key=lambda c: (c.request_time, c.chunk_end_time))
        return out


def aggregate(flows: Sequence[FlowRecord], provider: Provider | str | None = None,
              idle: float = SESSION_IDLE) -> list[Session]:
    """Group provider-tagged flows into sessions.

    YouTube flows sharing (client IP, protocol) merge into one session until
    the client has been idle for ``idle`` seconds; every Twitch flow is its own
    session. Flows whose provider is unknown are ignored.
    """
    want = Provider(provider) if provider is not None else None
    sessions: list[Session] = []
    youtube: dict[SessionKey, list[FlowRecord]] = {}
    for f in sorted(flows, key=lambda r: (r.first_ts, str(r.flow_key))):
        prov = f.provider_tag.provider
        if prov is Provider.UNKNOWN or (want is not None and prov is not want):
            continue
        key = SessionKey(f.flow_key.src_ip, f.flow_key.protocol)
        if prov is Provider.TWITCH:
            name = f"{key}/{f.flow_key.src_port}"
            sessions.append(Session(key, prov, [f], name))
        else:
            youtube.setdefault(key, []).append(f)
    for key, members in youtube.items():
        group: list[FlowRecord] = []
        last = -np.inf
        part = 0
        for f in members:
            if group and f.first_ts - last > idle:
                sessions.append(Session(key, Provider.YOUTUBE, group, f"{key}" + (f"#{part}" if part else "")))
                group, part = [], part + 1
            group.append(f)
            last = max(last, f.last_ts)
        if group:
            sessions.append(Session(key, Provider.YOUTUBE, group, f"{key}" + (f"#{part}" if part else "")))
    sessions.sort(key=lambda s: (s.start, s.name))
    return sessions

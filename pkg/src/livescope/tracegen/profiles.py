"""Provider profiles and bandwidth conditioning schedules for the simulator.

Segment periods, buffer targets and audio chunk ranges follow the publicly
documented behaviour of the two providers. The video chunk size
distributions are simulator configuration: lognormal per resolution, with
Twitch rungs far enough apart to be separable and YouTube neighbours
overlapping noticeably.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..packets import Provider, StreamKind

__all__ = [
    "KB",
    "ConditionerSchedule",
    "ProviderProfile",
    "PROFILE_FAMILIES",
    "RESOLUTION_BINS",
    "TWITCH_RESOLUTIONS",
    "YOUTUBE_RESOLUTIONS",
    "conditioner_preset",
    "load_conditioner",
    "load_profile",
    "make_profile",
    "resolution_bin",
    "sample_profile",
]

KB = 1024

TWITCH_RESOLUTIONS = ("160p", "360p", "480p", "720p", "720p60", "source")
YOUTUBE_RESOLUTIONS = ("144p", "240p", "360p", "480p", "720p", "1080p")
RESOLUTION_BINS = ("LD", "SD", "HD", "SOURCE")

# median bytes of a 2-second video segment per rung
_TWITCH_MEDIANS = {r: 76 * KB * 1.9**i for i, r in enumerate(TWITCH_RESOLUTIONS)}
_YOUTUBE_MEDIANS = {r: 40 * KB * 1.7**i for i, r in enumerate(YOUTUBE_RESOLUTIONS)}
# Per-stream content spread. With the 0.25 per-chunk spread, the mean chunk
# size of a 30-s window then has a log-sd of ~0.18, so neighbouring YouTube
# rungs (1.7x apart) overlap by ~15%.
_YOUTUBE_CONTENT_SIGMA = 0.175


def resolution_bin(resolution: str) -> str:
    """Map a nominal resolution label onto LD / SD / HD / SOURCE."""
    if resolution == "source":
        return "SOURCE"
    lines = int(resolution.split("p")[0])
    if lines < 360:
        return "LD"
    if lines < 720:
        return "SD"
    return "HD"


@dataclass(frozen=True)
class ProviderProfile:
    provider: Provider
    kind: StreamKind
    mode: str  # TwitchLow | TwitchNormal | YT_ULL | YT_LL | n/a
    segment_period: float
    startup_burst_segments: int
    buffer_target: float
    buf_min: float
    audio_separate: bool
    audio_chunk_bytes: tuple[float, float]  # per segment; (0, 0) when muxed
    video_chunk_bytes_by_resolution: dict[str, tuple[float, float]]  # res -> (median, sigma) per segment
    content_sigma: dict[str, float] = field(default_factory=dict)
    request_len_audio: tuple[int, int] = (380, 460)
    request_len_video: tuple[int, int] = (380, 460)
    n_flows: int = 1
    manifest_flow: bool = False
    sni: str = ""
    trick_play: float = 0.0  # probability of one seek event (VoD only)

    def __post_init__(self):
        if self.segment_period not in (1, 2, 4, 5, 10):
            raise ValueError(f"unsupported segment period {self.segment_period}")
        if self.kind is StreamKind.LIVE and self.buffer_target > 12:
            raise ValueError("live buffer target must be at most 12 s")
        if self.kind is StreamKind.VOD and self.buffer_target < 30:
            raise ValueError("VoD buffer target must be at least 30 s")

    @property
    def resolutions(self) -> tuple[str, ...]:
        return tuple(self.video_chunk_bytes_by_resolution)

    @property
    def label(self) -> dict:
        return {"provider": self.provider.value, "kind": self.kind.value, "mode": self.mode}


def _video_table(medians: dict[str, float], seg: float, sigma: float) -> dict[str, tuple[float, float]]:
    return {r: (m * seg / 2.0, sigma) for r, m in medians.items()}


def make_profile(name: str, *, segment_period: float | None = None, buffer_target: float | None = None,
                 trick_play: float = 0.0) -> ProviderProfile:
    """Build one of the named profiles.

    Names: ``twitch-live-low``, ``twitch-live-normal``, ``twitch-vod``,
    ``youtube-ull``, ``youtube-ll``, ``youtube-vod``.
    """
    if name in ("twitch-live-low", "twitch-live-normal"):
        low = name.endswith("low")
        return ProviderProfile(
            provider=Provider.TWITCH,
            kind=StreamKind.LIVE,
            mode="TwitchLow" if low else "TwitchNormal",
            segment_period=2,
            startup_burst_segments=2 if low else 4,
            buffer_target=6 if low else 10,
            buf_min=2,
            audio_separate=True,
            audio_chunk_bytes=(33 * KB, 37 * KB),
            video_chunk_bytes_by_resolution=_video_table(_TWITCH_MEDIANS, 2, 0.12),
            content_sigma={r: (0.2 if r == "source" else 0.08) for r in TWITCH_RESOLUTIONS},
            manifest_flow=True,
            sni="video-edge-{tag}.abs.hls.ttv.net",
        )
    if name == "twitch-vod":
        seg = segment_period or 10
        return ProviderProfile(
            provider=Provider.TWITCH,
            kind=StreamKind.VOD,
            mode="n/a",
            segment_period=seg,
            startup_burst_segments=1,
            buffer_target=buffer_target or 40,
            buf_min=seg,
            audio_separate=False,
            audio_chunk_bytes=(0, 0),
            video_chunk_bytes_by_resolution=_video_table(_TWITCH_MEDIANS, seg, 0.12),
            content_sigma={r: (0.2 if r == "source" else 0.08) for r in TWITCH_RESOLUTIONS},
            sni="vod-secure.twitch.com",
            trick_play=trick_play,
        )
    if name in ("youtube-ull", "youtube-ll"):
        ull = name == "youtube-ull"
        seg = 1 if ull else 2
        return ProviderProfile(
            provider=Provider.YOUTUBE,
            kind=StreamKind.LIVE,
            mode="YT_ULL" if ull else "YT_LL",
            segment_period=seg,
            startup_burst_segments=4 if ull else 5,
            buffer_target=5 if ull else 12,
            buf_min=3 if ull else 6,
            audio_separate=True,
            audio_chunk_bytes=(28 * KB, 34 * KB) if ull else (56 * KB, 68 * KB),
            video_chunk_bytes_by_resolution=_video_table(_YOUTUBE_MEDIANS, seg, 0.25),
            content_sigma={r: _YOUTUBE_CONTENT_SIGMA for r in YOUTUBE_RESOLUTIONS},
            request_len_audio=(640, 720),
            request_len_video=(860, 980),
            n_flows=2,
            sni="rr{tag}---sn-{host}.googlevideo.com",
        )
    if name == "youtube-vod":
        seg = segment_period or 5
        return ProviderProfile(
            provider=Provider.YOUTUBE,
            kind=StreamKind.VOD,
            mode="n/a",
            segment_period=seg,
            startup_burst_segments=1,
            buffer_target=buffer_target or 30,
            buf_min=seg,
            audio_separate=True,
            audio_chunk_bytes=(28 * KB * seg, 34 * KB * seg),
            video_chunk_bytes_by_resolution=_video_table(_YOUTUBE_MEDIANS, seg, 0.25),
            content_sigma={r: _YOUTUBE_CONTENT_SIGMA for r in YOUTUBE_RESOLUTIONS},
            request_len_audio=(640, 720),
            request_len_video=(860, 980),
            n_flows=2,
            sni="rr{tag}---sn-{host}.googlevideo.com",
            trick_play=trick_play,
        )
    raise ValueError(f"unknown profile {name!r}")


def load_profile(path: str | Path) -> ProviderProfile:
    """Read a profile from a JSON or TOML file.

    The file holds ProviderProfile fields. With ``base = "<profile name>"``
    only the fields that differ from that named profile need to be given.
    """
    path = Path(path)
    raw = path.read_bytes()
    data = tomllib.loads(raw.decode()) if path.suffix == ".toml" else json.loads(raw)
    known = {f.name for f in fields(ProviderProfile)}
    unknown = set(data) - known - {"base"}
    if unknown:
        raise ValueError(f"unknown profile fields: {sorted(unknown)}")
    conv = dict(data)
    conv.pop("base", None)
    if "provider" in conv:
        conv["provider"] = Provider(conv["provider"])
    if "kind" in conv:
        conv["kind"] = StreamKind(conv["kind"])
    for name in ("audio_chunk_bytes", "request_len_audio", "request_len_video"):
        if name in conv:
            conv[name] = tuple(conv[name])
    if "video_chunk_bytes_by_resolution" in conv:
        conv["video_chunk_bytes_by_resolution"] = {r: tuple(v) for r, v in conv["video_chunk_bytes_by_resolution"].items()}
    if "base" in data:
        return replace(make_profile(data["base"]), **conv)
    return ProviderProfile(**conv)


#: family name -> concrete profile names drawn uniformly per stream
PROFILE_FAMILIES: dict[str, tuple[str, ...]] = {
    "twitch-live": ("twitch-live-low", "twitch-live-normal"),
    "twitch-vod": ("twitch-vod",),
    "youtube-live": ("youtube-ull", "youtube-ll"),
    "youtube-vod": ("youtube-vod",),
}


def sample_profile(name: str, rng: np.random.Generator, *, trick_play: float = 0.2) -> ProviderProfile:
    """Draw a concrete profile for a family or profile name.

    VoD families also randomize the buffer target (and YouTube's segment
    period between 5 and 10 s) so a corpus is not a single metronome.
    """
    names = PROFILE_FAMILIES.get(name, (name,))
    concrete = names[int(rng.integers(len(names)))]
    if concrete == "twitch-vod":
        return make_profile(concrete, buffer_target=float(rng.choice([30, 40, 50, 60])), trick_play=trick_play)
    if concrete == "youtube-vod":
        seg = float(rng.choice([5, 10]))
        return make_profile(concrete, segment_period=seg, buffer_target=float(rng.choice([30, 45, 60])),
                            trick_play=trick_play)
    return make_profile(concrete)


@dataclass(frozen=True)
class ConditionerSchedule:
    """Piecewise-constant downlink rate.

    The link runs at ``base_rate``; when ``cap_interval`` is set, a cap drawn
    uniformly from ``cap_range`` holds for ``cap_duration`` seconds starting
    at ``cap_offset``, ``cap_offset + cap_interval``, ... Explicit
    ``overrides`` ``(start, end, rate)`` are applied last.
    """

    base_rate: float = 20e6
    cap_interval: float | None = 40.0
    cap_duration: float = 10.0
    cap_range: tuple[float, float] = (100e3, 2e6)
    rng_seed: int = 0
    cap_offset: float = 30.0
    overrides: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        if self.base_rate < 0:
            raise ValueError("base_rate must be non-negative")
        if self.cap_interval is not None and self.cap_interval < self.cap_duration:
            raise ValueError("caps must not overlap")

    @property
    def capped(self) -> bool:
        return self.cap_interval is not None

    def schedule(self, duration: float) -> tuple[np.ndarray, np.ndarray]:
        """Return breakpoints ``times`` (starting at 0) and per-interval rates (bit/s)."""
        edges = {0.0}
        caps: list[tuple[float, float, float]] = []
        if self.cap_interval is not None:
            rng = np.random.default_rng(self.rng_seed)
            start = self.cap_offset
            while start < duration:
                rate = float(rng.uniform(*self.cap_range))
                caps.append((start, start + self.cap_duration, rate))
                start += self.cap_interval
        for s, e, _ in (*caps, *self.overrides):
            edges.update((float(s), float(e)))
        times = np.array(sorted(t for t in edges if t >= 0 and np.isfinite(t)))
        rates = np.full(len(times), float(self.base_rate))
        for s, e, r in caps:
            sel = (times >= s) & (times < e)
            rates[sel] = np.minimum(rates[sel], r)
        for s, e, r in self.overrides:
            rates[(times >= s) & (times < e)] = r
        # merge equal neighbours
        keep = np.ones(len(times), dtype=bool)
        keep[1:] = rates[1:] != rates[:-1]
        return times[keep], rates[keep]

    def with_seed(self, seed: int) -> "ConditionerSchedule":
        return replace(self, rng_seed=seed)

    def to_dict(self) -> dict:
        return asdict(self)


def conditioner_preset(name: str, seed: int = 0) -> ConditionerSchedule:
    """``none``: ample constant bandwidth; ``default``: 10-s caps every 40 s;
    ``aggressive``: lower base rate and caps from t = 10 s every 20 s."""
    if name == "none":
        return ConditionerSchedule(base_rate=50e6, cap_interval=None, rng_seed=seed)
    if name == "default":
        return ConditionerSchedule(base_rate=20e6, rng_seed=seed)
    if name == "aggressive":
        return ConditionerSchedule(base_rate=8e6, cap_interval=20.0, cap_offset=10.0, rng_seed=seed)
    raise ValueError(f"unknown conditioner preset {name!r}")


def load_conditioner(spec: str, seed: int = 0) -> ConditionerSchedule:
    """Resolve a preset name or a JSON file with ConditionerSchedule fields."""
    if spec in ("none", "default", "aggressive"):
        return conditioner_preset(spec, seed)
    data = json.loads(Path(spec).read_text())
    if "cap_range" in data:
        data["cap_range"] = tuple(data["cap_range"])
    data["overrides"] = tuple(tuple(o) for o in data.get("overrides", ()))
    data.setdefault("rng_seed", seed)
    return ConditionerSchedule(**data)

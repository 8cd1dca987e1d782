"""Streaming client / network simulator producing labeled packet traces."""

from .corpus import generate_corpus, simulate_family, stream_seed, write_stream
from .profiles import (
    KB,
    PROFILE_FAMILIES,
    RESOLUTION_BINS,
    TWITCH_RESOLUTIONS,
    YOUTUBE_RESOLUTIONS,
    ConditionerSchedule,
    ProviderProfile,
    conditioner_preset,
    load_conditioner,
    load_profile,
    make_profile,
    resolution_bin,
    sample_profile,
)
from .simulator import GroundTruth, Link, simulate_stream
from .trace import FlowSpec, Trace, merge_traces

__all__ = [
    "KB",
    "PROFILE_FAMILIES",
    "RESOLUTION_BINS",
    "TWITCH_RESOLUTIONS",
    "YOUTUBE_RESOLUTIONS",
    "ConditionerSchedule",
    "FlowSpec",
    "GroundTruth",
    "Link",
    "ProviderProfile",
    "Trace",
    "conditioner_preset",
    "generate_corpus",
    "load_conditioner",
    "load_profile",
    "make_profile",
    "merge_traces",
    "resolution_bin",
    "sample_profile",
    "simulate_family",
    "simulate_stream",
    "stream_seed",
    "write_stream",
]

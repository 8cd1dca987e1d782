"""Labeled corpora: one jsonl trace plus one ground-truth file per stream."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import orjson
import numpy as np

from .profiles import conditioner_preset, load_conditioner, sample_profile
from .simulator import GroundTruth, simulate_stream
from .trace import Trace

__all__ = ["generate_corpus", "simulate_family", "stream_seed", "write_stream"]


def stream_seed(seed: int, family: str, index: int) -> int:
    """Deterministic per-stream seed derived from the corpus seed."""
    ss = np.random.SeedSequence([seed, sum(family.encode()) * 7919 + len(family), index])
    return int(ss.generate_state(1)[0])


def simulate_family(family: str, index: int, seed: int = 0, duration: float = 120.0,
                    condition: str = "default", **kw) -> tuple[Trace, GroundTruth]:
    """The ``index``-th stream of ``family`` in a corpus seeded with ``seed``."""
    s = stream_seed(seed, family, index)
    rng = np.random.default_rng(s)
    profile = sample_profile(family, rng)
    cond = load_conditioner(condition, s) if condition else conditioner_preset("default", s)
    return simulate_stream(profile, cond, duration, s, jitter=condition != "none", **kw)


def write_stream(trace: Trace, truth: GroundTruth, stem: Path, fmt: str = "jsonl") -> Path:
    """Write ``<stem>.jsonl`` (or ``.pcap``) and its ``<stem>.truth.json``."""
    if fmt == "pcap":
        path = trace.write_pcap(stem.with_suffix(".pcap"))
    else:
        path = trace.write_jsonl(stem.with_suffix(".jsonl"))
    stem.with_suffix(".truth.json").write_bytes(orjson.dumps(truth.to_dict()))
    return path


def _one(args) -> str:
    out, family, index, seed, duration, condition, fmt = args
    trace, truth = simulate_family(family, index, seed, duration, condition)
    stem = out / f"{family}-{index:05d}"
    write_stream(trace, truth, stem, fmt)
    return stem.name


def generate_corpus(spec: dict[str, int], out: str | Path, *, seed: int = 0, duration: float = 120.0,
                    condition: str = "default", fmt: str = "jsonl", workers: int = 1) -> list[str]:
    """Simulate ``spec[family]`` streams per profile family into ``out``.

    File names are ``<family>-<index>.jsonl`` (or ``.pcap``) with a sibling
    ``.truth.json``. The output depends only on the arguments, not on
    ``workers``.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if not out.is_dir():
        raise OSError(f"cannot write corpus into {out}")
    jobs = [(out, fam, i, seed, duration, condition, fmt) for fam, n in sorted(spec.items()) for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_one, jobs, chunksize=4))
    return [_one(j) for j in jobs]

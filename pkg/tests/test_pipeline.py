from __future__ import annotations

import csv
import dataclasses
import logging

import orjson
import pytest

from livescope.classifier import ConfigError
from livescope.pipeline import Models, Pipeline, PipelineConfig, run
from livescope.tracegen import conditioner_preset, make_profile, merge_traces, simulate_family, simulate_stream


@pytest.fixture(scope="module")
def models(models_dir):
    return Models.load(models_dir)


def write(trace, tmp_path, name="t.jsonl"):
    return trace.write_jsonl(tmp_path / name)


def strip_fields(path, *fields):
    lines = []
    for line in path.read_bytes().splitlines():
        r = orjson.loads(line)
        for f in fields:
            r.pop(f, None)
        lines.append(orjson.dumps(r))
    path.write_bytes(b"\n".join(lines) + b"\n")
    return path


def declared_at(windows, session, t):
    """Declaration in force for ``session`` at window start ``t``."""
    ws = [w for w in windows if w["session"] == session and w["window_start"] <= t + 1e-9]
    return ws[-1]["declared"] if ws else "undeclared"


# -- configuration -------------------------------------------------------------


@pytest.mark.parametrize("window", [15, 0, 60])
def test_window_length_validated(window):
    with pytest.raises(ConfigError):
        PipelineConfig(window_seconds=window)


def test_missing_model_directory_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        Models.load(tmp_path / "nope")


def test_window_model_mismatch_rejected(models_dir, tmp_path):
    (tmp_path / "twitch-lstm-w10.json").write_bytes((models_dir / "twitch-lstm-w30.json").read_bytes())
    with pytest.raises(ValueError):
        Models.load(tmp_path, 10)


# -- behaviour examples ----------------------------------------------------------


def test_vod_to_live_switch_timeline(models, tmp_path):
    vod, _ = simulate_family("youtube-vod", 0, seed=7, duration=90)
    live, _ = simulate_family("youtube-live", 0, seed=7, duration=120)
    src = vod.flows[0].src
    # the same client switches to a live stream on new connections
    live.flows = [dataclasses.replace(f, src=src, sport=f.sport + 1000) for f in live.flows]
    out, _ = run(write(merge_traces([vod, live], [0.0, 90.0]), tmp_path), models, PipelineConfig())
    (s,) = out.sessions
    made = [d for _, d in s["declaration_timeline"] if d != "undeclared"]
    assert made == ["vod", "live"]
    live_at = next(k for k, (_, d) in enumerate(s["declaration_timeline"]) if d == "live")
    k = next(i for i, w in enumerate(out.windows) if w["window_start"] == s["declaration_timeline"][live_at][0])
    # the switch needs two consecutive live windows
    assert s["windows"][k - 1 : k + 1] == ["live", "live"]
    assert s["verdict"] == "live"


def test_no_sni_and_no_labels_classifies_nothing(models, tmp_path):
    trace, _ = simulate_family("twitch-live", 0, seed=3, duration=40)
    path = strip_fields(write(trace, tmp_path), "sni", "label")
    out, stats = run(path, models, PipelineConfig())
    assert out.report["classified_sessions"] == 0
    assert out.sessions == [] and out.windows == [] and out.qoe == []
    assert out.report["flows_by_provider"]["unknown"] == out.report["flows"] > 0
    assert stats["packets"] == len(trace)


def test_missing_provider_model_skips_with_warning(models_dir, tmp_path, caplog):
    (tmp_path / "m").mkdir()
    (tmp_path / "m" / "twitch-lstm-w30.json").write_bytes((models_dir / "twitch-lstm-w30.json").read_bytes())
    yt, _ = simulate_family("youtube-live", 0, seed=2, duration=40)
    tw, _ = simulate_family("twitch-live", 0, seed=2, duration=40)
    with caplog.at_level(logging.WARNING, logger="livescope.pipeline"):
        out, _ = run(write(merge_traces([yt, tw], [0.0, 0.0]), tmp_path), Models.load(tmp_path / "m"),
                     PipelineConfig())
    assert {s["provider"] for s in out.sessions} == {"twitch"}
    assert any("youtube" in r.getMessage() for r in caplog.records)
    assert out.report["flows_by_provider"]["youtube"] > 0


def test_empty_trace(models, tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    out, stats = run(p, models, PipelineConfig())
    assert stats["packets"] == 0
    assert (out.windows, out.sessions, out.qoe) == ([], [], [])
    assert out.report["sessions"] == 0 and out.report["providers"]["twitch"]["live_pct"] == 0.0
    files = out.write(tmp_path / "out")
    assert all(f.exists() for f in files)


def test_short_trace_has_no_windows(models, tmp_path):
    trace, _ = simulate_family("twitch-live", 0, seed=4, duration=20)
    out, _ = run(write(trace, tmp_path), models, PipelineConfig())
    # the session exists, but its only window is incomplete and never labelled
    assert out.windows == [] and out.report["classified_sessions"] == 0
    assert all(s["declared"] == "undeclared" for s in out.sessions)


# -- isolation, determinism, outputs ----------------------------------------------


@pytest.fixture(scope="module")
def mixed_run(models, tmp_path_factory):
    d = tmp_path_factory.mktemp("mixed")
    traces = [simulate_family(f, i, seed=5, duration=100)[0]
              for i, f in enumerate(("twitch-live", "twitch-vod", "youtube-live", "youtube-vod"))]
    path = merge_traces(traces, [0.0, 3.0, 6.0, 9.0]).write_jsonl(d / "mixed.jsonl")
    return path, run(path, models, PipelineConfig())[0]


def test_qoe_only_for_live_declared_windows(mixed_run):
    _, out = mixed_run
    assert out.qoe
    for r in out.qoe:
        assert declared_at(out.windows, r["flow"], r["window_start"]) == "live"
    vod = {s["session"] for s in out.sessions if s["declared"] == "vod"}
    assert vod and not any(r["flow"] in vod for r in out.qoe)


def test_no_qoe_flag(models, mixed_run):
    path, out = mixed_run
    bare, _ = run(path, models, PipelineConfig(qoe=False))
    assert bare.qoe == [] and bare.windows == out.windows


def test_repeated_runs_byte_identical(models, mixed_run, tmp_path):
    path, _ = mixed_run
    digests = []
    for k in range(2):
        out, _ = run(path, models, PipelineConfig())
        digests.append([f.read_bytes() for f in out.write(tmp_path / str(k), csv_mirror=True)])
    assert digests[0] == digests[1]


def test_outputs_sorted_by_session_and_window(mixed_run):
    _, out = mixed_run
    keys = [(w["session"], w["window_start"]) for w in out.windows]
    assert keys == sorted(keys)
    keys = [(r["flow"], r["window_start"]) for r in out.qoe]
    assert keys == sorted(keys)


def test_csv_mirrors_match_jsonl(mixed_run, tmp_path):
    _, out = mixed_run
    files = out.write(tmp_path, csv_mirror=True)
    assert {f.name for f in files} == {"windows.jsonl", "windows.csv", "sessions.jsonl", "sessions.csv",
                                       "qoe.jsonl", "qoe.csv", "report.json"}
    for name in ("windows", "qoe", "sessions"):
        rows = list(csv.DictReader(open(tmp_path / f"{name}.csv", newline="")))
        js = [orjson.loads(x) for x in (tmp_path / f"{name}.jsonl").read_bytes().splitlines()]
        assert len(rows) == len(js)
        for r, j in zip(rows, js):
            assert set(r) >= set(j)
    assert orjson.loads((tmp_path / "report.json").read_bytes()) == orjson.loads(orjson.dumps(out.report))


def test_labels_do_not_change_inference(models, mixed_run, tmp_path):
    path, out = mixed_run
    blind, _ = run(path, models, PipelineConfig(), score=False)
    stripped = tmp_path / "nolabel.jsonl"
    stripped.write_bytes(path.read_bytes())
    strip_fields(stripped, "label")
    unlabelled, _ = run(stripped, models, PipelineConfig())
    assert unlabelled.windows == out.windows and unlabelled.qoe == out.qoe
    assert "accuracy" in out.report and "accuracy" not in unlabelled.report
    assert blind.windows == out.windows


def test_push_and_run_agree(models, mixed_run):
    from livescope.packets import TraceReader

    path, out = mixed_run
    pipe = Pipeline(models, PipelineConfig())
    for p in TraceReader(path):
        pipe.push(p)
    streamed = pipe.finish()
    assert streamed.windows == out.windows and streamed.qoe == out.qoe


# -- report examples --------------------------------------------------------------


def test_all_live_corpus_reports_full_live_share(models, tmp_path):
    traces = [simulate_family("twitch-live", i, seed=21, duration=65)[0] for i in range(4)]
    out, _ = run(write(merge_traces(traces, [0.0] * 4), tmp_path), models, PipelineConfig())
    assert out.report["providers"]["twitch"]["sessions"] == 4
    assert out.report["providers"]["twitch"]["live_pct"] == 100.0


def _fixed_corpus(name, condition, n, seed, duration=95):
    traces = []
    for i in range(n):
        s = seed + i
        tr, _ = simulate_stream(make_profile(name), conditioner_preset(condition, s), duration, s,
                                client_ip=f"10.7.{i}.1", resolution="720p", abr=False, jitter=condition != "none")
        traces.append(tr)
    return merge_traces(traces, [0.0] * n)


def test_hd_only_uncapped_corpus(models, tmp_path):
    out, _ = run(write(_fixed_corpus("twitch-live-normal", "none", 6, 100), tmp_path), models, PipelineConfig())
    r = out.report["providers"]["twitch"]
    assert r["qoe_windows"] >= 12
    assert r["resolution_time_pct"]["HD"] >= 95.0
    assert r["stalled_windows_pct"] == 0.0


def test_aggressive_conditioner_stalls_more(models, tmp_path):
    calm, _ = run(write(_fixed_corpus("twitch-live-normal", "none", 6, 200), tmp_path, "a.jsonl"), models,
                  PipelineConfig())
    rough, _ = run(write(_fixed_corpus("twitch-live-normal", "aggressive", 6, 200), tmp_path, "b.jsonl"), models,
                   PipelineConfig())
    a = calm.report["providers"]["twitch"]["stalled_windows_pct"]
    b = rough.report["providers"]["twitch"]["stalled_windows_pct"]
    assert b > a


@pytest.mark.slow
def test_fifty_live_fifty_vod_twitch_accuracy(models, tmp_path):
    traces = [simulate_family("twitch-live", i, seed=31, duration=35)[0] for i in range(50)]
    traces += [simulate_family("twitch-vod", i, seed=31, duration=35)[0] for i in range(50)]
    out, _ = run(write(merge_traces(traces, [0.0] * 100), tmp_path), models, PipelineConfig(qoe=False))
    assert out.report["labelled_sessions"] == 100
    assert out.report["accuracy"] >= 0.95

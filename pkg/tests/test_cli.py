from __future__ import annotations

import shutil
import subprocess
import sys

import orjson
import pytest

from livescope.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    assert main(["gen", "--profile", "twitch-live", "--count", "3", "--duration", "35", "--seed", "1",
                 "--out", str(d)]) == EXIT_OK
    assert main(["gen", "--profile", "twitch-vod", "--count", "3", "--duration", "35", "--seed", "1",
                 "--out", str(d)]) == EXIT_OK
    return d


def test_gen_writes_traces_and_truth(corpus):
    assert len(list(corpus.glob("*.jsonl"))) == 6
    assert len(list(corpus.glob("*.truth.json"))) == 6


def test_gen_from_profile_file(tmp_path):
    prof = tmp_path / "slow-vod.json"
    prof.write_text('{"base": "twitch-vod", "segment_period": 4}')
    out = tmp_path / "out"
    assert main(["gen", "--profile", str(prof), "--count", "2", "--duration", "15", "--condition", "none",
                 "--out", str(out)]) == EXIT_OK
    assert sorted(p.name for p in out.glob("*.jsonl")) == ["slow-vod-00000.jsonl", "slow-vod-00001.jsonl"]


def test_gen_pcap(tmp_path):
    assert main(["gen", "--profile", "youtube-live", "--duration", "15", "--format", "pcap",
                 "--out", str(tmp_path)]) == EXIT_OK
    assert len(list(tmp_path.glob("*.pcap"))) == 1


def test_train_eval_on_corpus(corpus, tmp_path, capsys):
    model = tmp_path / "twitch-lstm-w30.json"
    assert main(["train", "--provider", "twitch", "--corpus", str(corpus), "--epochs", "5",
                 "--out", str(model)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "held-out accuracy" in out and "actual / predicted" in out
    assert main(["eval", "--model", str(model), "--corpus", str(corpus)]) == EXIT_OK
    assert "accuracy" in capsys.readouterr().out


def test_train_baseline_and_resolution_simulated(tmp_path, capsys):
    base = tmp_path / "b.json"
    assert main(["train", "--provider", "twitch", "--task", "baseline", "--simulate", "120",
                 "--out", str(base)]) == EXIT_OK
    assert main(["eval", "--model", str(base), "--provider", "twitch", "--simulate", "60", "--seed", "3"]) == EXIT_OK
    res = tmp_path / "r.json"
    assert main(["train", "--provider", "twitch", "--task", "resolution", "--simulate", "30",
                 "--out", str(res)]) == EXIT_OK
    assert main(["eval", "--model", str(res), "--provider", "twitch", "--simulate", "10", "--seed", "3"]) == EXIT_OK
    assert "resolution bin accuracy" in capsys.readouterr().out
    # baseline and resolution models need an explicit provider
    assert main(["eval", "--model", str(base), "--simulate", "10"]) == EXIT_CONFIG


def test_train_single_class_corpus_is_config_error(tmp_path):
    assert main(["gen", "--profile", "twitch-live", "--count", "2", "--duration", "35",
                 "--out", str(tmp_path)]) == EXIT_OK
    assert main(["train", "--provider", "twitch", "--corpus", str(tmp_path), "--out",
                 str(tmp_path / "m.json")]) == EXIT_CONFIG


def test_run_and_report(corpus, models_dir, tmp_path, capsys):
    trace = sorted(corpus.glob("twitch-live-*.jsonl"))[0]
    out = tmp_path / "run"
    assert main(["run", "--trace", str(trace), "--models", str(models_dir), "--out", str(out), "--csv"]) == EXIT_OK
    assert "accuracy against trace labels: 1.0000" in capsys.readouterr().out
    for name in ("windows", "sessions", "qoe"):
        assert (out / f"{name}.jsonl").exists() and (out / f"{name}.csv").exists()
    report = orjson.loads((out / "report.json").read_bytes())
    assert report["providers"]["twitch"]["live_pct"] == 100.0
    assert main(["report", "--run", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert text.splitlines()[0].split()[:2] == ["provider", "sessions"]
    assert "twitch" in text and "stalled %" in text


def test_run_no_qoe(corpus, models_dir, tmp_path):
    trace = sorted(corpus.glob("twitch-live-*.jsonl"))[0]
    assert main(["run", "--trace", str(trace), "--models", str(models_dir), "--out", str(tmp_path),
                 "--no-qoe"]) == EXIT_OK
    assert (tmp_path / "qoe.jsonl").read_bytes() == b""


# -- exit codes -----------------------------------------------------------------


def test_bad_flags_exit_1(tmp_path):
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main(["run", "--trace", "x"]) == EXIT_CONFIG
    assert main(["gen", "--profile", "no-such-profile", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_window_exit_1(corpus, models_dir, tmp_path):
    trace = next(corpus.glob("*.jsonl"))
    assert main(["run", "--trace", str(trace), "--models", str(models_dir), "--window", "15",
                 "--out", str(tmp_path)]) == EXIT_CONFIG


def test_corrupt_model_exit_1(corpus, tmp_path):
    (tmp_path / "twitch-lstm-w30.json").write_text("{broken")
    trace = next(corpus.glob("*.jsonl"))
    assert main(["run", "--trace", str(trace), "--models", str(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["eval", "--model", str(tmp_path / "twitch-lstm-w30.json"), "--simulate", "4"]) == EXIT_CONFIG


def test_missing_files_exit_2(models_dir, tmp_path):
    assert main(["run", "--trace", str(tmp_path / "missing.jsonl"), "--models", str(models_dir),
                 "--out", str(tmp_path / "o")]) == EXIT_IO
    assert main(["report", "--run", str(tmp_path / "nothing")]) == EXIT_IO
    assert main(["eval", "--model", str(tmp_path / "missing.json"), "--simulate", "4"]) == EXIT_IO


def test_empty_trace_exit_0(models_dir, tmp_path, capsys):
    (tmp_path / "e.jsonl").write_text("")
    assert main(["run", "--trace", str(tmp_path / "e.jsonl"), "--models", str(models_dir),
                 "--out", str(tmp_path / "o")]) == EXIT_OK
    assert "0 session(s) classified" in capsys.readouterr().out


@pytest.mark.skipif(shutil.which("livescope") is None, reason="console script not installed")
def test_console_script_version():
    r = subprocess.run(["livescope", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("livescope ")


def test_module_help_exits_zero():
    r = subprocess.run([sys.executable, "-m", "livescope.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gen" in r.stdout

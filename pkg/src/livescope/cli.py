"""Command-line interface: ``livescope gen|train|eval|run|report``.

Exit codes: 0 success, 1 fatal configuration error (bad flags, unusable
model or corpus), 2 I/O error (missing or unreadable files).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import orjson

from . import __version__

log = logging.getLogger("livescope")

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    """Bad combination of command-line options."""


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    from .tracegen import (
        PROFILE_FAMILIES,
        generate_corpus,
        load_conditioner,
        load_profile,
        simulate_stream,
        stream_seed,
        write_stream,
    )
    from .tracegen.profiles import make_profile

    out = Path(args.out)
    if args.profile in PROFILE_FAMILIES or _is_profile_name(args.profile, make_profile):
        names = generate_corpus({args.profile: args.count}, out, seed=args.seed, duration=args.duration,
                                condition=args.condition, fmt=args.format, workers=args.workers)
    else:
        path = Path(args.profile)
        if not path.is_file():
            raise UsageError(f"unknown profile {args.profile!r} (not a profile name or a file)")
        profile = load_profile(path)
        out.mkdir(parents=True, exist_ok=True)
        names = []
        for i in range(args.count):
            s = stream_seed(args.seed, path.stem, i)
            trace, truth = simulate_stream(profile, load_conditioner(args.condition, s), args.duration, s,
                                           jitter=args.condition != "none")
            stem = out / f"{path.stem}-{i:05d}"
            write_stream(trace, truth, stem, args.format)
            names.append(stem.name)
    print(f"wrote {len(names)} trace(s) to {out}")
    return EXIT_OK


def _is_profile_name(name: str, make_profile) -> bool:
    try:
        make_profile(name)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------------------
# train / eval


def _confusion_table(conf: np.ndarray) -> str:
    """Rows = actual, columns = predicted; counts and row-normalized rates."""
    head = "actual / predicted"
    lines = [f"{head:<20}{'Live':>14}{'VoD':>14}"]
    for name, row in zip(("Live", "VoD"), conf):
        n = row.sum()
        rates = row / n if n else np.zeros(2)
        cells = [f"{int(c)} ({r:.3f})" for c, r in zip(row, rates)]
        lines.append(f"{name:<20}{cells[0]:>14}{cells[1]:>14}")
    return "\n".join(lines)


def _windows(args, provider: str, window: int):
    from .datasets import classifier_windows, corpus_windows

    if args.corpus:
        ws = corpus_windows(args.corpus, provider, window, args.format)
    else:
        ws = classifier_windows(provider, args.simulate, seed=args.seed, condition=args.condition,
                                workers=args.workers)
        ws.X = ws.truncated(int(round(window / 0.5)))
    if len(ws) == 0:
        raise UsageError(f"no labeled {provider} windows found")
    return ws


def cmd_train(args) -> int:
    from .classifier import BaselineModel, ConfigError, LiveVodModel, TrainConfig, confusion_matrix, save_model, train
    from .datasets import corpus_resolution_samples, group_split, resolution_samples
    from .qoe import train_resolution_forest

    if args.task == "resolution":
        if args.corpus:
            feats, bins, _ = corpus_resolution_samples(args.corpus, args.provider, args.format)
        else:
            feats, _, bins, _ = resolution_samples(args.provider, args.simulate, seed=args.seed, workers=args.workers)
        if len(feats) == 0:
            raise UsageError(f"no {args.provider} resolution samples found")
        try:
            model = train_resolution_forest(feats, bins, seed=args.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        save_model(model, args.out)
        print(f"resolution forest: {len(feats)} windows, 5-fold accuracy {model.cv_accuracy:.4f}")
        print(f"saved {args.out}")
        return EXIT_OK

    ws = _windows(args, args.provider, args.window)
    if len(np.unique(ws.y)) < 2:
        raise ConfigError("training corpus must contain both live and VoD windows")
    split = group_split(ws.stream, ws.y, 0.2, args.seed)
    if args.task == "baseline":
        tr, te = split
        model = BaselineModel.fit(ws.lags[tr], ws.y[tr], seed=args.seed)
        pred = model.predict(ws.lags[te])
        acc = float(np.mean(pred == ws.y[te]))
        conf = confusion_matrix(ws.y[te] == 1, pred == 1)
    else:
        cfg = TrainConfig(epochs=args.epochs, rng_seed=args.seed)
        res = train(ws.X, ws.y, cfg, split=split)
        acc, conf = res.test_accuracy, res.confusion
        model = LiveVodModel(res.params, args.provider, args.window,
                             metrics={"test_accuracy": acc, "windows": len(ws), "epochs": args.epochs})
    save_model(model, args.out)
    print(f"{args.provider} {args.task}: {len(ws)} windows, held-out accuracy {acc:.4f}")
    print(_confusion_table(conf))
    print(f"saved {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .classifier import BaselineModel, LiveVodModel, confusion_matrix, load_model
    from .datasets import corpus_resolution_samples, resolution_samples
    from .qoe import ResolutionModel, estimate_resolution

    model = load_model(args.model)
    if isinstance(model, ResolutionModel):
        if not args.provider:
            raise UsageError("--provider is required to evaluate a resolution model")
        if args.corpus:
            feats, bins, _ = corpus_resolution_samples(args.corpus, args.provider, args.format)
        else:
            feats, _, bins, _ = resolution_samples(args.provider, args.simulate, seed=args.seed, workers=args.workers)
        if len(feats) == 0:
            raise UsageError("no resolution samples found")
        pred = np.array([estimate_resolution(f, model) for f in feats])
        print(f"resolution bin accuracy {np.mean(pred == bins):.4f} over {len(feats)} windows")
        return EXIT_OK
    if isinstance(model, LiveVodModel):
        provider, window = model.provider, model.window_seconds
    elif isinstance(model, BaselineModel):
        if not args.provider:
            raise UsageError("--provider is required to evaluate a baseline model")
        provider, window = args.provider, 30
    else:  # pragma: no cover - load_model only returns the three kinds
        raise UsageError("unsupported model")
    ws = _windows(args, provider, window)
    pred = model.predict(ws.X) if isinstance(model, LiveVodModel) else model.predict(ws.lags)
    conf = confusion_matrix(ws.y == 1, pred == 1)
    print(f"{provider}: accuracy {np.mean(pred == ws.y):.4f} over {len(ws)} windows")
    print(_confusion_table(conf))
    return EXIT_OK


# ---------------------------------------------------------------------------
# run / report


def cmd_run(args) -> int:
    from .pipeline import Models, PipelineConfig, run

    cfg = PipelineConfig(window_seconds=args.window, qoe=not args.no_qoe)
    models = Models.load(args.models, args.window)
    if not models.classifiers:
        log.warning("no classifier models in %s; every flow will be skipped", args.models)
    out, stats = run(args.trace, models, cfg, fmt=args.format)
    paths = out.write(args.out, csv_mirror=args.csv)
    r = out.report
    print(f"{stats['packets']} packets ({stats['skipped']} skipped) at {stats['packets_per_second']:.0f} pkt/s; "
          f"{r.get('classified_sessions', 0)} session(s) classified, {r['qoe_records']} QoE record(s)")
    if r.get("accuracy") is not None:
        print(f"accuracy against trace labels: {r['accuracy']:.4f} ({r['labelled_sessions']} sessions)")
    print(f"wrote {len(paths)} file(s) to {args.out}")
    return EXIT_OK


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    return [orjson.loads(line) for line in path.read_bytes().splitlines() if line.strip()]


def cmd_report(args) -> int:
    from .pipeline import build_report

    run_dir = Path(args.run)
    if not (run_dir / "sessions.jsonl").is_file():
        raise FileNotFoundError(f"{run_dir} holds no run outputs (sessions.jsonl missing)")
    sessions = _read_jsonl(run_dir / "sessions.jsonl")
    report = build_report(sessions, _read_jsonl(run_dir / "qoe.jsonl"), _read_jsonl(run_dir / "windows.jsonl"))
    saved = run_dir / "report.json"
    if saved.is_file():
        prev = orjson.loads(saved.read_bytes())
        for k in ("accuracy", "labelled_sessions", "packets", "flows"):
            if k in prev:
                report[k] = prev[k]
    print(format_report(report))
    return EXIT_OK


def format_report(report: dict) -> str:
    cols = ("sessions", "live %", "VoD %", "LD %", "SD %", "HD %", "Source %", "stalled %")
    lines = ["provider  " + "".join(f"{c:>10}" for c in cols)]
    for prov, r in report["providers"].items():
        res = r["resolution_time_pct"]
        vals = (r["sessions"], r["live_pct"], r["vod_pct"], res["LD"], res["SD"], res["HD"], res["SOURCE"],
                r["stalled_windows_pct"])
        lines.append(f"{prov:<10}" + "".join(f"{v:>10}" if isinstance(v, int) else f"{v:>10.1f}" for v in vals))
    if report.get("accuracy") is not None:
        lines.append(f"accuracy against trace labels: {report['accuracy']:.4f} ({report['labelled_sessions']} sessions)")
    return "\n".join(lines)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="livescope", description="Live vs VoD detection and live QoE from flow telemetry.")
    p.add_argument("--version", action="version", version=f"livescope {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-v info, -vv debug)")
    sub = p.add_subparsers(dest="command", required=True)

    def fmt(sp):
        sp.add_argument("--format", choices=("jsonl", "pcap"), default="jsonl", help="trace file format")

    g = sub.add_parser("gen", help="simulate labeled traces")
    g.add_argument("--profile", required=True,
                   help="family (twitch-live, twitch-vod, youtube-live, youtube-vod), profile name, or JSON/TOML file")
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--duration", type=float, default=120.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--condition", default="default", help="none, default, aggressive or a JSON schedule file")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--out", required=True)
    fmt(g)

    def data(sp):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--corpus", help="directory of labeled traces")
        src.add_argument("--simulate", type=int, help="simulate this many windows (streams for resolution)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--condition", default="default")
        sp.add_argument("--workers", type=int, default=1)
        fmt(sp)

    t = sub.add_parser("train", help="train a classifier, baseline or resolution model")
    t.add_argument("--provider", required=True, choices=("twitch", "youtube"))
    t.add_argument("--task", choices=("classifier", "baseline", "resolution"), default="classifier")
    t.add_argument("--window", type=int, choices=(10, 20, 30), default=30)
    t.add_argument("--epochs", type=int, default=40)
    t.add_argument("--out", required=True)
    data(t)

    e = sub.add_parser("eval", help="accuracy and confusion matrix of a saved model")
    e.add_argument("--model", required=True)
    e.add_argument("--provider", choices=("twitch", "youtube"), help="needed for baseline and resolution models")
    data(e)

    r = sub.add_parser("run", help="run the streaming pipeline over a trace")
    r.add_argument("--trace", required=True)
    r.add_argument("--models", required=True, help="directory with <provider>-lstm-w<window>.json models")
    r.add_argument("--window", type=int, default=30)
    r.add_argument("--out", required=True)
    r.add_argument("--csv", action="store_true", help="also write CSV mirrors")
    r.add_argument("--no-qoe", action="store_true", help="skip QoE telemetry")
    fmt(r)

    rep = sub.add_parser("report", help="summarize a run directory")
    rep.add_argument("--run", required=True)
    return p


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "run": cmd_run, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    from .classifier.model import ModelFormatError
    from .classifier.train import ConfigError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, ModelFormatError) as exc:
        print(f"livescope: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"livescope: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"livescope: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

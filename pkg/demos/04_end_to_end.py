"""
End to end: corpus, models, streaming run, report
=================================================

Same steps as ``livescope gen``, ``train``, ``run`` and ``report``, done
through the library in a temporary directory.
"""

import tempfile
from pathlib import Path

from livescope.classifier import LiveVodModel, TrainConfig, save_model, train
from livescope.cli import format_report
from livescope.datasets import classifier_windows, resolution_samples
from livescope.pipeline import Models, PipelineConfig, run
from livescope.qoe import train_resolution_forest
from livescope.tracegen import merge_traces, simulate_family

work = Path(tempfile.mkdtemp(prefix="livescope-demo-"))
models_dir = work / "models"
models_dir.mkdir()

for provider in ("twitch", "youtube"):
    ws = classifier_windows(provider, 800, seed=3)
    res = train(ws.X, ws.y, TrainConfig(epochs=40, holdout=0.0))
    save_model(LiveVodModel(res.params, provider, 30), models_dir / f"{provider}-lstm-w30.json")
    feats, _, bins, _ = resolution_samples(provider, 150, seed=3, duration=61)
    save_model(train_resolution_forest(feats, bins, folds=1), models_dir / f"{provider}-resolution.json")
    print(f"trained {provider} models")

# a mixed link: two viewers per family, starting a few seconds apart
traces = [simulate_family(f, i, seed=9, duration=150)[0]
          for f in ("twitch-live", "twitch-vod", "youtube-live", "youtube-vod") for i in range(2)]
path = merge_traces(traces, [2.0 * k for k in range(len(traces))]).write_jsonl(work / "mixed.jsonl")

out, stats = run(path, Models.load(models_dir), PipelineConfig())
out.write(work / "run", csv_mirror=True)
print(f"\n{stats['packets']} packets at {stats['packets_per_second']:,.0f} pkt/s")
for s in out.sessions:
    print(f"{s['session']:<28} {s['provider']:<8} verdict={s['verdict']:<10} windows={''.join(w[0] for w in s['windows'])}")
print()
print(format_report(out.report))
print(f"\noutputs in {work / 'run'}")

from __future__ import annotations

import numpy as np
import pytest

from livescope.flowtab import Chunk
from livescope.packets import Direction, FlowKey, Packet

#: "PASS/FAIL criterion ..." lines collected by the acceptance tests
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


KEY = FlowKey("10.0.0.1", "10.0.0.2", 40000, 443, "tcp")


def up(t: float, n: int = 300, key: FlowKey = KEY) -> Packet:
    return Packet(t, key, Direction.UP, n, n + 40)


def down(t: float, n: int = 1400, key: FlowKey = KEY) -> Packet:
    return Packet(t, key, Direction.DOWN, n, n + 40)


def chunk(request_time: float, nbytes: int, end: float | None = None, req_len: int = 400) -> Chunk:
    end = request_time + 0.1 if end is None else end
    return Chunk(request_time, req_len, min(request_time + 0.01, end), end, max(1, nbytes // 1400), nbytes)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def models_dir(tmp_path_factory):
    """Small but well-trained 30-s classifiers and resolution forests for both providers."""
    from livescope.classifier import LiveVodModel, TrainConfig, save_model, train
    from livescope.datasets import classifier_windows, resolution_samples
    from livescope.qoe import train_resolution_forest

    out = tmp_path_factory.mktemp("models")
    for prov in ("twitch", "youtube"):
        ws = classifier_windows(prov, 800, seed=11)
        res = train(ws.X, ws.y, TrainConfig(epochs=40, holdout=0.0))
        save_model(LiveVodModel(res.params, prov, 30), out / f"{prov}-lstm-w30.json")
        feats, _, bins, _ = resolution_samples(prov, 150, seed=11, duration=61)
        save_model(train_resolution_forest(feats, bins, folds=1), out / f"{prov}-resolution.json")
    return out

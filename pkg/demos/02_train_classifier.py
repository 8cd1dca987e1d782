"""
Training the live/VoD classifier
================================

Windows of 60 request counts feed a small LSTM; an autocorrelation
random forest gives a baseline on the same split.
"""

import time

import numpy as np

from livescope.classifier import BaselineModel, TrainConfig, train
from livescope.datasets import classifier_windows, group_split

provider = "youtube"
ws = classifier_windows(provider, 1000, seed=0)
print(f"{len(ws)} windows, {int(ws.y.sum())} live")

# windows of one stream never straddle train and test
split = group_split(ws.stream, ws.y, 0.2, seed=0)
t0 = time.perf_counter()
result = train(ws.X, ws.y, TrainConfig(epochs=30), split=split)
print(f"LSTM held-out accuracy {result.test_accuracy:.4f} ({time.perf_counter() - t0:.1f} s)")
print("confusion (rows actual live/VoD, cols predicted):\n", result.confusion)

tr, te = split
base = BaselineModel.fit(ws.lags[tr], ws.y[tr], seed=0)
print(f"baseline accuracy {np.mean(base.predict(ws.lags[te]) == ws.y[te]):.4f}")

# shorter windows: only the first 20 bins (10 s)
short = train(ws.truncated(20), ws.y, TrainConfig(epochs=30), split=split)
print(f"10-s window accuracy {short.test_accuracy:.4f}")

"""
Buffer estimation and stalls
============================

Each downloaded video segment adds one segment duration to the buffer;
playback drains it in real time. The estimate is compared with the
simulated player's buffer on a link with periodic rate caps.
"""

import numpy as np

from livescope.datasets import trace_chunks
from livescope.packets import Provider
from livescope.qoe import StallParams, default_buf_min, estimate_seg_dur, predict_buffer, separate_video_chunks
from livescope.tracegen import conditioner_preset, make_profile, simulate_stream

profile = make_profile("twitch-live-normal")
trace, truth = simulate_stream(profile, conditioner_preset("default", 12), 120, 12)

chunks = sorted((c for i in range(len(trace.flows)) for c in trace_chunks(trace, i)), key=lambda c: c.request_time)
video = separate_video_chunks(chunks, Provider.TWITCH)
seg = estimate_seg_dur(video)
# the segment duration comes from the median request gap in the first 20 s;
# a deep throttle during that warmup makes the player catch up with
# back-to-back requests and biases it low (about 1 stream in 40 here)
params = StallParams(seg, default_buf_min(Provider.TWITCH, None, seg))
traj = predict_buffer(video, params, duration=truth.duration)
print(f"estimated segment duration {seg:g} s (true {truth.seg_dur:g} s)")

# the estimate is defined at chunk ends; compare every fifth one
for t, b in list(zip(traj.times, traj.buffer))[::5]:
    true_b = truth.buffer_health[min(int(round(t * 10)), len(truth.buffer_health) - 1)]
    print(f"t={t:6.2f}s  true buffer {true_b:5.2f}  estimate {b:5.2f}")

print("true stalls:     ", [(round(a, 1), round(b, 1)) for a, b in truth.stall_intervals])
print("estimated stalls:", [(round(a, 1), round(b, 1)) for a, b in traj.stall_intervals])
T, P = truth.stall_windows(), traj.windows
print(f"5-s windows: {int(T.sum())} stalled, accuracy {np.mean(T == P):.3f}")

"""
Request patterns of live and on-demand streams
==============================================

A live player asks for each segment as soon as it exists, so requests come
at the segment period. An on-demand player fills a deep buffer with a
burst, then tops it up slowly. Binned request counts show the difference.
"""

import numpy as np

from livescope.datasets import trace_sessions
from livescope.tracegen import simulate_family

# one simulated stream per family, 60 s each, same seed
for family in ("twitch-live", "twitch-vod", "youtube-live", "youtube-vod"):
    trace, truth = simulate_family(family, 0, seed=1, duration=60)
    (session,) = trace_sessions(trace)
    x = session.window(0)  # first 60 half-second bins
    print(f"{family:<14} mode={truth.mode:<13} seg={truth.seg_dur:g}s  requests={int(x.sum()):3d}")
    print("   ", "".join(str(min(int(v), 9)) for v in x))

# request inter-arrival times for the live stream
trace, truth = simulate_family("twitch-live", 0, seed=1, duration=60)
video = np.array([t for _, t, media in truth.chunk_media if media == "video"])
print("\nlive video request gaps (s):", np.round(np.diff(video)[:10], 2))

"""
Gradient spike detection and smoothing on demand
================================================

A moving average of gradient matrices flags steps whose gradient norm jumps
well above the recent trend. Only the flagged matrix is smoothed.
"""

import numpy as np

from spectral_sentinel import GradTracker, SoftmaxTemp, make_rng, pss_step, stable_rank

rng = make_rng(3)

# a quiet stream with one 10x spike at step 50
tracker = GradTracker(alpha=0.1, tau=2.0)
for step in range(100):
    g = (1.0 + 0.01 * rng.standard_normal()) * (10.0 if step == 50 else 1.0)
    ratio, fired = tracker.update(np.full((4, 4), g))
    if fired:
        print(f"step {step}: ratio {ratio:.2f} fired")

# the same mechanism inside a parameter dictionary
params = {"attn": rng.standard_normal((16, 16)) * 0.8 ** np.arange(16), "ffn": rng.standard_normal((16, 16))}
trackers = {name: GradTracker() for name in params}
for step in range(20):
    scale = 8.0 if step == 15 else 1.0
    grads = {"attn": scale * np.ones((16, 16)), "ffn": np.ones((16, 16))}
    before = stable_rank(params["attn"]).stable_rank
    params, actions = pss_step(trackers, params, grads, SoftmaxTemp())
    for a in actions:
        print(f"step {step}: {a.name} {a.kind}  SR {before:.2f} -> {stable_rank(params['attn']).stable_rank:.2f}")

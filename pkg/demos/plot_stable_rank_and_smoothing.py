"""
Stable rank and spectrum smoothing
==================================

A weight matrix dominated by a few singular directions has a low stable
rank. Smoothing the dominant block raises it again without touching the
rest of the spectrum.
"""

import numpy as np

from spectral_sentinel import Clip, Convolution, LogScale, SoftmaxTemp, make_rng, smooth_weights, stable_rank
from spectral_sentinel.linalg import full_svd, orthonormal_columns

rng = make_rng(0)

# build a 64x64 matrix with a steep geometric spectrum
sigma = 0.6 ** np.arange(64)
W = (orthonormal_columns(64, 64, rng) * sigma) @ orthonormal_columns(64, 64, rng).T
rep = stable_rank(W)
print(f"stable rank {rep.stable_rank:.3f}  top sigma {rep.sigma_top:.3f}")

# every policy keeps the order of the dominant block and never lowers SR
for policy in (Convolution(), SoftmaxTemp(), Clip(1.0), LogScale()):
    W_star, out = smooth_weights(W, policy, rng=make_rng(1))
    print(f"{type(policy).__name__:12s} k={out.k}  SR {out.sr_before:.3f} -> {out.sr_after:.3f}")

# the tail beyond the block is untouched
W_star, out = smooth_weights(W, Clip(1.0), exact=True)
tail_before, tail_after = full_svd(W).sigma[out.k:], full_svd(W_star).sigma[out.k:]
print("max tail change", np.max(np.abs(tail_after - tail_before)))

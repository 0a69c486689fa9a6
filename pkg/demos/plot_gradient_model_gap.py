"""
How far the structured gradient is from the true one
====================================================

The structured gradient keeps only the leading terms for long sequences.
Here it is compared with a central-difference gradient of the surrogate
loss on a small model. The cosine is a measurement, not a guarantee.
"""

import numpy as np

from spectral_sentinel import make_rng
from spectral_sentinel import toymodel as tm


def cosine(a, b):
    return float(np.sum(a * b) / (np.linalg.norm(a) * np.linalg.norm(b)))


for mode in ("zero_mean", "mean_mu"):
    for seed in range(3):
        rng = make_rng(seed)
        basis = tm.gen_basis(8, 32, 0.5, rng)
        params = tm.init_params(8, rng)
        batch = tm.sample_batch(basis, 256, mode, 0.3, rng)
        c = tm.calibrate_c(params, batch)
        mc = tm.symmetrize(tm.qk_gradient_mc(params, batch, c))
        fd = tm.fd_gradient(params, batch, c)
        print(f"{mode:9s} seed {seed}: cosine(fd, simplified) = {cosine(fd, mc):+.3f}")

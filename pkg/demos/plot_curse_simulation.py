"""
Training the toy model with and without smoothing
=================================================

Paired runs from the same seed: plain SGD on the query-key matrix, and the
same loop with spike-triggered smoothing. Traces are written as CSV for
external plotting.
"""

import sys

import numpy as np

from spectral_sentinel import fileformats as ff
from spectral_sentinel import make_rng
from spectral_sentinel import theoremlab as tl

out_dir = sys.argv[1] if len(sys.argv) > 1 else "."
cfg = tl.TheoremConfig(d=32, T=128, spectrum="geom:0.5", mode="mean_mu")

base = tl.run_curse_simulation(cfg, steps=200, rng=make_rng(42))
rescue = tl.run_curse_simulation(cfg, tl.PssSettings(), steps=200, rng=make_rng(42))
ff.write_trace(f"{out_dir}/baseline.csv", base)
ff.write_trace(f"{out_dir}/pss.csv", rescue)

for label, tr in (("baseline", base), ("pss", rescue)):
    sr, g = tr.column("sr_wk"), tr.column("grad_fro")
    print(
        f"{label:8s} SR(W_K) {sr[0]:.2f} -> {sr[-1]:.2f}  max |g| {np.nanmax(g):.3e}"
        f"  smoothing events {int(tr.column('pss_triggered').sum())}"
    )

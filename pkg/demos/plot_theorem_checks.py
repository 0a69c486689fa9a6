"""
Perturbation checks of the singularity feedback
===============================================

Each check builds a state with a chosen alignment and spectrum, takes one
small structured gradient step and compares the measured spectral change
with its first-order prediction.
"""

from spectral_sentinel import theoremlab as tl

cfg = tl.TheoremConfig()
print(f"{'check':7s} {'seed':>4s} {'status':>9s} {'predicted':>12s} {'measured':>12s}")
for name in ("sr", "align", "bounds"):
    for seed in range(3):
        r = tl.run_check(name, cfg, seed)
        print(f"{name:7s} {seed:4d} {r.status:>9s} {r.predicted:12.4e} {r.measured:12.4e}")

# the closed form for the key-representation stable rank needs a larger model
big = tl.TheoremConfig(d=128, T=256)
r = tl.run_check("repr", big, 0)
print(f"repr closed form {r.predicted:.4f} vs measured {r.measured:.4f} ({r.status})")

# the sign premise matters: with a positive scalar the same step raises SR
r = tl.run_check("sr", cfg.replace(p_value=1.0), 0)
print(f"sr with positive premise: measured dSR {r.measured:+.3e} -> {r.status}")

# the Monte Carlo estimate of P is a mean of squared norms, hence never negative
r = tl.run_check("psign", cfg.replace(n_sequences=2000), 0)
print(f"P_hat {r.details['p_hat']:.3e} +- {r.details['p_stderr']:.1e} -> {r.status}")

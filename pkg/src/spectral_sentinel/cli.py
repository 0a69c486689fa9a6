"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 usage or parse error,
3 degenerate input, 4 simulated divergence. JSON goes to standard output
with fixed key order and 17 significant digits; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import fileformats as ff
from . import theoremlab as tl
from .diagnostics import singularity_alignment, stable_rank
from .errors import (
    CapacityError,
    ConfigurationError,
    DegenerateInputError,
    DegenerateStateError,
    InvalidArgumentError,
    InvalidInputError,
    NumericalError,
)
from .linalg import as_matrix, make_rng
from .smoothing import parse_policy, smooth_weights

log = logging.getLogger("spectral_sentinel")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DEGENERATE, EXIT_DIVERGED = 0, 1, 2, 3, 4
SEED_ENV = "SPECTRAL_SENTINEL_SEED"
THEOREMS = ("sr", "align", "repr", "bounds", "psign")


class UsageError(Exception):
    pass


def resolve_seed(flag: Optional[int]) -> int:
    """``--seed`` wins, then ``$SPECTRAL_SENTINEL_SEED``, then 0."""
    if flag is not None:
        seed = flag
    else:
        raw = os.environ.get(SEED_ENV, "").strip()
        if not raw:
            return 0
        try:
            seed = int(raw)
        except ValueError:
            raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None
    if seed < 0:
        raise UsageError(f"seed must be non-negative, got {seed}")
    return seed


def emit(obj) -> None:
    sys.stdout.write(ff.dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


def _coerce(name: str, raw: str):
    fields = {f.name: f for f in dataclasses.fields(tl.TheoremConfig)}
    if name not in fields:
        raise UsageError(f"unknown config key {name!r}")
    default = fields[name].default
    raw = raw.strip()
    low = raw.lower()
    try:
        if name == "seeds":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if name in ("eta", "p_value", "c"):
            if low in ("none", "auto", "measured", "calibrate", ""):
                return None
            return float(raw)
        if isinstance(default, bool):
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise UsageError(f"bad value for {name}: {raw!r}") from None


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise UsageError(f"config line {lineno}: expected key=value")
        out[key.strip()] = _coerce(key.strip(), val)
    return out


def build_config(path: Optional[str], overrides: Sequence[str]) -> tl.TheoremConfig:
    values = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text))
    for item in overrides:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = _coerce(key.strip(), val)
    try:
        return tl.TheoremConfig(**values)
    except (ConfigurationError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_diagnose(args) -> int:
    W, _ = ff.read_matrix(args.path)
    rep = stable_rank(W)
    out = {"fro_norm": rep.fro_norm, "sigma_top": rep.sigma_top, "stable_rank": rep.stable_rank}
    if args.alignment_with:
        Z, _ = ff.read_matrix(args.alignment_with)
        al = singularity_alignment(W, Z)
        out["phi"] = al.phi
        out["ill_conditioned"] = al.ill_conditioned
    emit(out)
    return EXIT_OK


def cmd_smooth(args) -> int:
    W, fmt = ff.read_matrix(args.path)
    policy = parse_policy(args.policy, args.params)
    rng = make_rng(resolve_seed(args.seed))
    W_star, outcome = smooth_weights(W, policy, rng=rng, exact=args.exact)
    ff.write_matrix(args.out, W_star, fmt)
    emit(outcome.to_dict())
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    seed = resolve_seed(args.seed)
    try:
        cfg = tl.TheoremConfig(
            d=args.d, T=args.t, eta=args.eta, spectrum=args.spectrum, batch=args.batch,
            mode=args.mode, gain=args.gain, sim_step_fraction=args.step_fraction,
            c=args.c, seeds=(seed,),
        )
        pss = None
        if args.pss == "on":
            pss = tl.PssSettings(tau=args.tau, alpha=args.alpha, policy=parse_policy(args.policy, args.params))
    except (ConfigurationError, InvalidArgumentError) as exc:
        raise UsageError(str(exc)) from exc
    trace = tl.run_curse_simulation(cfg, pss=pss, steps=args.steps, rng=make_rng(seed))
    ff.write_trace(args.trace, trace)
    sr = trace.column("sr_wk")
    g = trace.column("grad_fro")
    emit({
        "steps": len(trace),
        "diverged": trace.diverged,
        "eta": trace.eta,
        "c": trace.c,
        "sr_wk_first": sr[0],
        "sr_wk_last": sr[np.isfinite(sr)][-1] if np.any(np.isfinite(sr)) else math.nan,
        "grad_fro_max": float(np.nanmax(g)) if np.any(np.isfinite(g)) else math.nan,
        "pss_triggers": int(trace.column("pss_triggered").sum()),
        "trace": str(args.trace),
    })
    return EXIT_DIVERGED if trace.diverged else EXIT_OK


def cmd_verify(args) -> int:
    cfg = build_config(args.config, args.set or [])
    names = THEOREMS if args.theorem == "all" else (args.theorem,)
    if args.seeds is not None:
        if args.seeds < 1:
            raise UsageError("--seeds must be >= 1")
        base = resolve_seed(args.seed)
        seeds = tuple(range(base, base + args.seeds))
    elif args.seed is not None or os.environ.get(SEED_ENV):
        seeds = (resolve_seed(args.seed),)
    else:
        seeds = cfg.seeds
    reports = [tl.run_check(name, cfg, s) for name in names for s in seeds]
    emit([r.to_dict() for r in reports])
    counts = {st: sum(r.status == st for r in reports) for st in tl.STATUSES}
    print("summary: " + " ".join(f"{k}={v}" for k, v in counts.items()) + f" total={len(reports)}", file=sys.stderr)
    if counts["vacuous"]:
        print("warning: vacuous reports (nothing truncated, P is identically 0)", file=sys.stderr)
    return EXIT_VERIFY if counts["fail"] else EXIT_OK


def _parse_kind(kind: str, rows: int, cols: int, rng) -> np.ndarray:
    name, _, arg = kind.partition(":")
    if name == "gaussian" and not arg:
        return rng.standard_normal((rows, cols))
    if name == "diag":
        try:
            vals = [float(x) for x in arg.split(",")]
        except ValueError:
            raise UsageError(f"bad diag values {arg!r}") from None
        if not vals or len(vals) > min(rows, cols):
            raise UsageError(f"diag needs 1..{min(rows, cols)} values, got {len(vals)}")
        W = np.zeros((rows, cols))
        W[np.arange(len(vals)), np.arange(len(vals))] = vals
        return W
    if name == "lowrank":
        try:
            k = int(arg)
        except ValueError:
            raise UsageError(f"bad rank {arg!r}") from None
        if not 1 <= k <= min(rows, cols):
            raise UsageError(f"rank must be in [1, {min(rows, cols)}], got {k}")
        return rng.standard_normal((rows, k)) @ rng.standard_normal((k, cols))
    raise UsageError(f"unknown kind {kind!r}; expected gaussian, diag:v1,v2,... or lowrank:k")


def cmd_gen_matrix(args) -> int:
    if args.rows < 1 or args.cols < 1:
        raise UsageError("--rows and --cols must be positive")
    rng = make_rng(resolve_seed(args.seed))
    W = as_matrix(_parse_kind(args.kind, args.rows, args.cols, rng))
    ff.write_matrix(args.out, W, ff.format_for(args.out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _optional_float(text: str) -> Optional[float]:
    if text.lower() in ("auto", "none", "calibrate"):
        return None
    return float(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spectral-sentinel", description="Singularity diagnostics and smoothing for attention weights.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("diagnose", help="stable rank, norms and optional alignment of a matrix file")
    d.add_argument("path")
    d.add_argument("--alignment-with", metavar="PATH")
    d.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("smooth", help="smooth the dominant singular block of a matrix file")
    s.add_argument("path")
    s.add_argument("--policy", required=True, help="conv, softmax, clip or log")
    s.add_argument("--params", default="", help='e.g. "0.25,0.5,0.25", "beta=0.1", "rho=1.5"')
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--exact", action="store_true", help="use a full SVD for the dominant block")
    s.set_defaults(func=cmd_smooth)

    m = sub.add_parser("simulate", help="train the toy model and write a metric trace")
    m.add_argument("--d", type=int, default=32)
    m.add_argument("--t", type=int, default=128)
    m.add_argument("--eta", type=float, help="absolute step size (default: --step-fraction rule)")
    m.add_argument("--step-fraction", type=float, default=tl.TheoremConfig.sim_step_fraction,
                   help="first step moves W_QK by this multiple of lambda_1")
    m.add_argument("--steps", type=int, default=200)
    m.add_argument("--seed", type=int)
    m.add_argument("--spectrum", default="geom:0.5")
    m.add_argument("--batch", type=int, default=tl.TheoremConfig.batch)
    m.add_argument("--mode", choices=("zero_mean", "mean_mu"), default="mean_mu")
    m.add_argument("--gain", type=float, default=tl.TheoremConfig.gain)
    m.add_argument("--c", type=_optional_float, default=None, help="truncation threshold (default: calibrated)")
    m.add_argument("--pss", choices=("on", "off"), default="off")
    m.add_argument("--tau", type=float, default=2.0)
    m.add_argument("--alpha", type=float, default=0.1)
    m.add_argument("--policy", default="softmax")
    m.add_argument("--params", default="auto")
    m.add_argument("--trace", required=True)
    m.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="run theorem checks and print JSON reports")
    v.add_argument("--theorem", choices=THEOREMS + ("all",), default="all")
    v.add_argument("--seeds", type=int, help="number of consecutive seeds starting at --seed")
    v.add_argument("--seed", type=int)
    v.add_argument("--config", help="key=value file")
    v.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("gen-matrix", help="write a seeded test matrix")
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--cols", type=int, required=True)
    g.add_argument("--kind", default="gaussian")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_matrix)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateInputError, DegenerateStateError) as exc:
        print(f"degenerate input: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (InvalidInputError, InvalidArgumentError, ConfigurationError, CapacityError, NumericalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

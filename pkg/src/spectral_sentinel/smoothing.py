"""Parametric singularity smoothing: flatten the dominant singular block.

A smoothing pass extracts ``W_dom = sum_{i<=k} s_i u_i v_i^T``, maps its
singular values through a policy and reassembles
``W* = W - W_dom + sum_{i<=k} s*_i u_i v_i^T``. Singular vectors are never
touched, so learned directions survive.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .diagnostics import GradTracker, stable_rank
from .errors import (
    DegenerateInputError,
    DegenerateStateError,
    InvalidArgumentError,
    InvalidInputError,
)
from .linalg import RandomSource, SvdFactors, as_matrix, full_svd, make_rng, randomized_topk_svd

log = logging.getLogger(__name__)

EXACT_BELOW_DIM = 64


@dataclass(frozen=True)
class Convolution:
    """Replicate-padded moving average over neighbouring singular values."""

    kernel: tuple = (0.25, 0.5, 0.25)

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=float)
        if k.ndim != 1 or len(k) % 2 != 1:
            raise InvalidArgumentError(f"kernel must have odd length, got {self.kernel}")
        if np.any(k < 0) or abs(k.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError(f"kernel must be non-negative and sum to 1, got {self.kernel}")
        object.__setattr__(self, "kernel", tuple(float(x) for x in k))

    def apply(self, sigma: np.ndarray) -> np.ndarray:
        m = len(self.kernel) // 2
        padded = np.concatenate([np.full(m, sigma[0]), sigma, np.full(m, sigma[-1])])
        out = np.zeros_like(sigma)
        for j, w in enumerate(self.kernel):
            if w:
                out += w * padded[j : j + len(sigma)]
        # Averaging can pull a tail value down faster than the head (e.g. a
        # plateau followed by a cliff). Flooring at the rescaled input keeps
        # every ratio s_i / s_1 from shrinking, so stable rank cannot drop.
        return np.maximum(out, sigma * (out[0] / sigma[0]))


@dataclass(frozen=True)
class SoftmaxTemp:
    """Softmax over ``beta * sigma``, rescaled to keep the block energy.

    ``beta=None`` resolves to ``1 / (2 sigma_1)`` at application time. Any
    ``beta <= 1 / sigma_1`` is guaranteed not to lower stable rank; larger
    values may.
    """

    beta: Optional[float] = None

    def __post_init__(self):
        if self.beta is not None and not self.beta > 0:
            raise InvalidArgumentError(f"beta must be positive, got {self.beta}")

    def resolve_beta(self, sigma: np.ndarray) -> float:
        return 0.5 / float(sigma[0]) if self.beta is None else float(self.beta)

    def apply(self, sigma: np.ndarray) -> np.ndarray:
        beta = self.resolve_beta(sigma)
        raw = np.exp(beta * (sigma - sigma[0]))  # the softmax normalizer cancels below
        return raw * math.sqrt(float(np.sum(sigma**2)) / float(np.sum(raw**2)))


@dataclass(frozen=True)
class Clip:
    """Cap at ``rho`` times the mean of the block."""

    rho: float = 1.0

    def __post_init__(self):
        if not self.rho >= 1.0:
            raise InvalidArgumentError(f"rho must be >= 1, got {self.rho}")

    def apply(self, sigma: np.ndarray) -> np.ndarray:
        return np.minimum(sigma, self.rho * float(np.mean(sigma)))


@dataclass(frozen=True)
class LogScale:
    """``s_k * (1 + ln(s_i / s_k))``: logarithmic compression anchored at the block's last value."""

    def apply(self, sigma: np.ndarray) -> np.ndarray:
        tail = sigma[-1]
        return tail * (1.0 + np.log(sigma / tail))


SmoothingPolicy = Union[Convolution, SoftmaxTemp, Clip, LogScale]


def apply_policy(policy: SmoothingPolicy, sigma: Sequence[float]) -> np.ndarray:
    """Map a positive, non-increasing spectrum of length >= 2 through ``policy``."""
    s = np.asarray(sigma, dtype=float)
    if s.ndim != 1 or len(s) < 2:
        raise InvalidArgumentError(f"need at least two singular values, got {s.shape}")
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        raise InvalidArgumentError("singular values must be finite and positive")
    if np.any(np.diff(s) > 0):
        raise InvalidArgumentError("singular values must be non-increasing")
    out = policy.apply(s)
    # guard against 1-ulp inversions introduced by floating-point rounding
    return np.minimum.accumulate(out)


def _parse_kv(params: str) -> dict:
    kv = {}
    if not params or params == "auto":
        return kv
    for part in params.split(","):
        key, sep, val = part.partition("=")
        if not sep:
            raise InvalidArgumentError(f"expected key=value in {params!r}")
        try:
            kv[key.strip()] = float(val)
        except ValueError as exc:
            raise InvalidArgumentError(f"bad number in {part!r}") from exc
    return kv


def parse_policy(name: str, params: str = "") -> SmoothingPolicy:
    """Build a policy from a CLI-style name and parameter string.

    >>> parse_policy("conv", "0.25,0.5,0.25")
    Convolution(kernel=(0.25, 0.5, 0.25))
    >>> parse_policy("clip", "rho=1.5")
    Clip(rho=1.5)
    """
    name = name.strip().lower()
    params = (params or "").strip()
    if name in ("conv", "convolution"):
        if not params:
            return Convolution()
        try:
            kernel = tuple(float(x) for x in params.split(","))
        except ValueError as exc:
            raise InvalidArgumentError(f"bad kernel {params!r}") from exc
        return Convolution(kernel)
    kv = _parse_kv(params)
    if name in ("softmax", "softmaxtemp"):
        policy = SoftmaxTemp(kv.pop("beta", None))
    elif name == "clip":
        policy = Clip(kv.pop("rho", 1.0))
    elif name in ("log", "logscale"):
        policy = LogScale()
    else:
        raise InvalidArgumentError(f"unknown policy {name!r}")
    if kv:
        raise InvalidArgumentError(f"unknown parameters {sorted(kv)} for policy {name!r}")
    return policy


def policy_to_dict(policy: SmoothingPolicy) -> dict:
    if isinstance(policy, Convolution):
        return {"name": "conv", "kernel": list(policy.kernel)}
    if isinstance(policy, SoftmaxTemp):
        return {"name": "softmax", "beta": "auto" if policy.beta is None else policy.beta}
    if isinstance(policy, Clip):
        return {"name": "clip", "rho": policy.rho}
    return {"name": "log"}


@dataclass(frozen=True)
class DominantBlock:
    k: int
    factors: SvdFactors
    source_shape: tuple
    stable_rank: float


@dataclass(frozen=True)
class SmoothingOutcome:
    k: int
    sigma_before: list
    sigma_after: list
    sr_before: float
    sr_after: float
    policy: SmoothingPolicy

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "sigma_before": list(self.sigma_before),
            "sigma_after": list(self.sigma_after),
            "sr_before": self.sr_before,
            "sr_after": self.sr_after,
            "policy": policy_to_dict(self.policy),
        }


def truncation_order(sr: float, min_dim: int) -> int:
    # 1e-9 slack so an exact integer SR (e.g. identity) is not bumped up by rounding
    return min(min_dim, max(2, math.ceil(sr - 1e-9)))


def dominant_block(W, rng: Optional[RandomSource] = None, exact: bool = False) -> DominantBlock:
    """Top ``k = max(2, ceil(SR(W)))`` singular triplets of ``W``.

    Uses the randomized decomposition unless ``exact`` is set or the smaller
    dimension is at most 64.
    """
    A = as_matrix(W)
    if min(A.shape) < 2:
        raise InvalidInputError(f"no dominant block exists for shape {A.shape}")
    sr = stable_rank(A).stable_rank
    k = truncation_order(sr, min(A.shape))
    if exact or min(A.shape) <= EXACT_BELOW_DIM:
        factors = full_svd(A).truncate(k)
    else:
        factors = randomized_topk_svd(A, k, rng=rng if rng is not None else make_rng(0))
    return DominantBlock(k=k, factors=factors, source_shape=A.shape, stable_rank=sr)


def smooth_weights(
    W,
    policy: SmoothingPolicy,
    rng: Optional[RandomSource] = None,
    exact: bool = False,
) -> tuple[np.ndarray, SmoothingOutcome]:
    """Return ``(W_star, outcome)`` with the dominant block's spectrum smoothed."""
    A = as_matrix(W)
    block = dominant_block(A, rng=rng, exact=exact)
    f = block.factors
    if np.any(f.sigma <= 0):
        raise DegenerateInputError(f"dominant block of rank < {block.k}; nothing to smooth")
    new_sigma = apply_policy(policy, f.sigma)
    delta = new_sigma - f.sigma
    if np.any(delta):
        W_star = A + (f.left * delta) @ f.right.T
        sr_after = stable_rank(W_star).stable_rank
    else:
        W_star = A.copy()
        sr_after = block.stable_rank
    outcome = SmoothingOutcome(
        k=block.k,
        sigma_before=f.sigma.tolist(),
        sigma_after=new_sigma.tolist(),
        sr_before=block.stable_rank,
        sr_after=sr_after,
        policy=policy,
    )
    return W_star, outcome


@dataclass
class PssAction:
    """One entry of the protection log: ``kind`` is smooth, reset or skip."""

    name: str
    step: int
    kind: str
    ratio: Optional[float] = None
    outcome: Optional[SmoothingOutcome] = None
    message: str = ""


def pss_step(
    trackers: Mapping[str, GradTracker],
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    policy: SmoothingPolicy,
    rng: Optional[RandomSource] = None,
    exact: bool = False,
) -> tuple[dict, list]:
    """Run detection on every named gradient and smooth the matrices that spiked.

    Tracker degeneracy resets that tracker and smoothing failures leave the
    matrix as is; both are logged rather than raised so training goes on.
    Matrices are visited in sorted name order, which fixes the log order.
    """
    if set(params) != set(grads) or set(params) != set(trackers):
        raise InvalidArgumentError("params, grads and trackers must share the same names")
    out = dict(params)
    actions = []
    for name in sorted(params):
        tracker = trackers[name]
        try:
            ratio, triggered = tracker.update(grads[name])
        except DegenerateStateError as exc:
            tracker.reset()
            log.warning("tracker %s reset: %s", name, exc)
            actions.append(PssAction(name, tracker.step, "reset", message=str(exc)))
            continue
        if not triggered:
            continue
        try:
            W_star, outcome = smooth_weights(params[name], policy, rng=rng, exact=exact)
        except (DegenerateInputError, InvalidArgumentError, InvalidInputError) as exc:
            log.warning("smoothing %s skipped: %s", name, exc)
            actions.append(PssAction(name, tracker.step, "skip", ratio=ratio, message=str(exc)))
            continue
        out[name] = W_star
        actions.append(PssAction(name, tracker.step, "smooth", ratio=ratio, outcome=outcome))
    return out, actions

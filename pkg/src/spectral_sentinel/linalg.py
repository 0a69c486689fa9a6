"""Dense matrix kernels: SVD oracle, power iteration and randomized top-k SVD."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    CapacityError,
    DegenerateInputError,
    InvalidArgumentError,
    InvalidInputError,
    NumericalError,
)

FULL_SVD_MAX_DIM = 1024
DESK_SCALE_MAX_DIM = 4096

RandomSource = np.random.Generator


def make_rng(seed: int) -> RandomSource:
    """Return a PCG64 generator; identical seeds give identical draw sequences."""
    if seed < 0:
        raise InvalidArgumentError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def fork(rng: RandomSource, n: int) -> list[RandomSource]:
    """Derive ``n`` independent child generators from ``rng``.

    Children never share state with the parent, so they can be handed to
    concurrent workers.
    """
    return rng.spawn(n)


def as_matrix(W, name: str = "W") -> np.ndarray:
    """Validate ``W`` as a finite 2-D float64 array (no copy when possible)."""
    A = np.asarray(W, dtype=np.float64)
    if A.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {A.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise InvalidInputError(f"{name} must be non-empty, got shape {A.shape}")
    if max(A.shape) > DESK_SCALE_MAX_DIM:
        raise CapacityError(f"{name} shape {A.shape} exceeds desk scale ({DESK_SCALE_MAX_DIM})")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return A


@dataclass(frozen=True)
class SvdFactors:
    """Top-k singular triplets, ``sigma`` descending.

    ``left`` is (rows, k) and ``right`` is (cols, k); columns are orthonormal.
    """

    sigma: np.ndarray
    left: np.ndarray
    right: np.ndarray

    @property
    def k(self) -> int:
        return int(self.sigma.shape[0])

    def truncate(self, k: int) -> "SvdFactors":
        if not 1 <= k <= self.k:
            raise InvalidArgumentError(f"cannot truncate {self.k} triplets to {k}")
        return SvdFactors(self.sigma[:k].copy(), self.left[:, :k].copy(), self.right[:, :k].copy())

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.sigma) @ self.right.T


def _canonical_signs(left: np.ndarray, right: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Largest-magnitude entry of every right vector is made positive.
    idx = np.argmax(np.abs(right), axis=0)
    signs = np.sign(right[idx, np.arange(right.shape[1])])
    signs[signs == 0] = 1.0
    return left * signs, right * signs


def frobenius_norm(W) -> float:
    """Return ``sqrt(sum(W**2))``.

    >>> frobenius_norm([[3.0, 4.0]])
    5.0
    """
    A = as_matrix(W)
    return float(np.sqrt(np.sum(A * A)))


def full_svd(W) -> SvdFactors:
    """Thin SVD of a desk-scale matrix with the canonical sign convention.

    Raises:
        CapacityError: if ``min(rows, cols)`` exceeds 1024.
        NumericalError: if LAPACK fails to converge.
    """
    A = as_matrix(W)
    if min(A.shape) > FULL_SVD_MAX_DIM:
        raise CapacityError(f"full_svd supports min dimension <= {FULL_SVD_MAX_DIM}, got {A.shape}")
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    U, V = _canonical_signs(U, Vt.T)
    return SvdFactors(s, U, V)


class PowerIterationResult(NamedTuple):
    sigma: float
    u: np.ndarray
    v: np.ndarray
    converged: bool
    iterations: int


def power_iteration_top(
    W,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    rng: RandomSource | None = None,
) -> PowerIterationResult:
    """Estimate the top singular triplet by alternating ``W v`` / ``W^T u``.

    Stops once the relative change of the Rayleigh estimate ``||W v||`` drops
    to ``tol``. Running out of iterations is not an error: the result carries
    ``converged=False`` and the caller decides what to do.
    """
    A = as_matrix(W)
    if tol <= 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")
    if not np.any(A):
        raise DegenerateInputError("power iteration on the zero matrix")
    if rng is None:
        rng = make_rng(0)

    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    sigma_prev = np.linalg.norm(A @ v)
    if sigma_prev == 0.0:
        # start vector fell in the null space; the dominant row direction is safe
        v = A[np.argmax(np.linalg.norm(A, axis=1))].copy()
        v /= np.linalg.norm(v)
        sigma_prev = np.linalg.norm(A @ v)

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        z = A.T @ (A @ v)
        v = z / np.linalg.norm(z)
        sigma = np.linalg.norm(A @ v)
        if abs(sigma - sigma_prev) <= tol * sigma:
            converged = True
            break
        sigma_prev = sigma

    w = A @ v
    sigma = float(np.linalg.norm(w))
    u = w / sigma
    u, v = _canonical_signs(u[:, None], v[:, None])
    return PowerIterationResult(sigma, u[:, 0], v[:, 0], converged, it)


def randomized_topk_svd(
    W,
    k: int,
    oversample: int = 10,
    power_iters: int = 2,
    rng: RandomSource | None = None,
) -> SvdFactors:
    """Randomized range finder with subspace iterations, then a small exact SVD.

    Cost is ``O(rows * cols * (k + oversample) * (power_iters + 1))``.
    """
    A = as_matrix(W)
    m, n = A.shape
    if not 1 <= k <= min(m, n):
        raise InvalidArgumentError(f"k must be in [1, {min(m, n)}], got {k}")
    if oversample < 0 or power_iters < 0:
        raise InvalidArgumentError("oversample and power_iters must be non-negative")
    if rng is None:
        rng = make_rng(0)

    width = min(k + oversample, min(m, n))
    omega = rng.standard_normal((n, width))
    Q, _ = np.linalg.qr(A @ omega)
    for _ in range(power_iters):
        # re-orthonormalize on both sides to keep small directions alive
        Z, _ = np.linalg.qr(A.T @ Q)
        Q, _ = np.linalg.qr(A @ Z)
    B = Q.T @ A
    try:
        Ub, s, Vt = np.linalg.svd(B, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"projected SVD did not converge: {exc}") from exc
    U = Q @ Ub[:, :k]
    U, V = _canonical_signs(U, Vt[:k].T)
    return SvdFactors(s[:k].copy(), U, V)


def orthonormal_columns(dim: int, k: int, rng: RandomSource) -> np.ndarray:
    """Haar-distributed ``dim x k`` matrix with orthonormal columns."""
    if not 1 <= k <= dim:
        raise InvalidArgumentError(f"need 1 <= k <= dim, got k={k}, dim={dim}")
    G = rng.standard_normal((dim, k))
    Q, R = np.linalg.qr(G)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d

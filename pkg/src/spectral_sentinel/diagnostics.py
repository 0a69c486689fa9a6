"""Stable-rank and alignment metrics, and the EWMA gradient-spike tracker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    CapacityError,
    DegenerateInputError,
    DegenerateStateError,
    InvalidArgumentError,
    InvalidInputError,
)
from .linalg import as_matrix, full_svd, make_rng, power_iteration_top

SYMMETRY_TOL = 1e-10
PSD_FLOOR = 1e-10
DEGENERACY_GAP = 1e-6
REPR_MAX_TOKENS = 1024


@dataclass(frozen=True)
class SpectralReport:
    stable_rank: float
    sigma_top: float
    fro_norm: float


@dataclass(frozen=True)
class AlignmentReport:
    phi: float
    v1: np.ndarray
    beta1: np.ndarray
    ill_conditioned: bool = False


def stable_rank(W) -> SpectralReport:
    """Stable rank ``||W||_F^2 / sigma_1(W)^2``.

    sigma_1 comes from power iteration; a full SVD is used when the
    iteration does not converge.

    Raises:
        DegenerateInputError: for the zero matrix.
    """
    A = as_matrix(W)
    fro = float(np.sqrt(np.sum(A * A)))
    if fro == 0.0:
        raise DegenerateInputError("stable rank of the zero matrix is undefined")
    res = power_iteration_top(A, rng=make_rng(0))
    sigma = res.sigma if res.converged else float(full_svd(A).sigma[0])
    sr = (fro / sigma) ** 2
    return SpectralReport(stable_rank=sr, sigma_top=sigma, fro_norm=fro)


def check_symmetric_psd(M, name: str = "W_QK") -> tuple[np.ndarray, np.ndarray]:
    """Validate a symmetric PSD matrix; returns (matrix, ascending eigenvalues)."""
    A = as_matrix(M, name)
    if A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"{name} must be square, got {A.shape}")
    scale = float(np.linalg.norm(A))
    if np.linalg.norm(A - A.T) > SYMMETRY_TOL * max(scale, 1.0):
        raise InvalidInputError(f"{name} is not symmetric")
    lam = np.linalg.eigvalsh(A)
    if lam[0] < -PSD_FLOOR * max(lam[-1], 1.0):
        raise InvalidInputError(f"{name} is indefinite (min eigenvalue {lam[0]:.3e})")
    return A, lam


def key_stable_rank(W_QK) -> float:
    """SR(W_K) for ``W_QK = W_K^T W_K``: trace over the top eigenvalue."""
    A, lam = check_symmetric_psd(W_QK)
    if lam[-1] <= 0.0:
        raise DegenerateInputError("W_QK is zero; stable rank undefined")
    return float(np.trace(A) / lam[-1])


def _top_right(A: np.ndarray) -> tuple[np.ndarray, bool]:
    f = full_svd(A)
    s = f.sigma
    ill = len(s) > 1 and s[0] < (1.0 + DEGENERACY_GAP) * s[1]
    return f.right[:, 0], bool(ill)


def singularity_alignment(W, Z) -> AlignmentReport:
    """``|<v_1(W), beta_1(Z)>|`` using top right singular vectors.

    Near-ties ``sigma_1 / sigma_2 < 1 + 1e-6`` in either matrix do not raise;
    the report is flagged ``ill_conditioned`` instead.
    """
    A = as_matrix(W, "W")
    B = as_matrix(Z, "Z")
    if A.shape[1] != B.shape[1]:
        raise InvalidArgumentError(f"column mismatch: W has {A.shape[1]}, Z has {B.shape[1]}")
    if not np.any(A) or not np.any(B):
        raise DegenerateInputError("alignment with a zero matrix is undefined")
    v1, ill_w = _top_right(A)
    b1, ill_z = _top_right(B)
    phi = min(1.0, abs(float(v1 @ b1)))
    return AlignmentReport(phi=phi, v1=v1, beta1=b1, ill_conditioned=ill_w or ill_z)


def repr_singularity(Z, W_QK) -> float:
    """SR(Z_K) from the eigenvalues of ``M = Z W_QK Z^T``.

    Since ``Z_K = W_K Z^T``, the eigenvalues of M are the squared singular
    values of Z_K, so the result is ``sum(lambda) / max(lambda)``.
    """
    B = as_matrix(Z, "Z")
    A, _ = check_symmetric_psd(W_QK)
    if B.shape[1] != A.shape[0]:
        raise InvalidArgumentError(f"Z has {B.shape[1]} columns but W_QK is {A.shape}")
    if B.shape[0] > REPR_MAX_TOKENS:
        raise CapacityError(f"T={B.shape[0]} exceeds {REPR_MAX_TOKENS}")
    M = B @ A @ B.T
    M = 0.5 * (M + M.T)
    lam = np.linalg.eigvalsh(M)
    if lam[-1] <= 0.0:
        raise DegenerateInputError("Z W_QK Z^T is zero")
    return float(np.sum(lam) / lam[-1])


@dataclass
class GradTracker:
    """EWMA of gradient matrices with a norm-ratio spike trigger.

    The default keeps the moving average of the full matrices and takes the
    norm afterwards. ``norm_ewma=True`` switches to the cheaper variant that
    averages scalar norms instead.
    """

    alpha: float = 0.1
    tau: float = 2.0
    norm_ewma: bool = False
    g_avg: Optional[np.ndarray] = field(default=None, repr=False)
    step: int = 0
    shape: Optional[tuple] = None

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidArgumentError(f"alpha must be in (0, 1], got {self.alpha}")
        if not self.tau > 1.0:
            raise InvalidArgumentError(f"tau must exceed 1, got {self.tau}")

    def reset(self) -> None:
        self.g_avg = None
        self.step = 0
        self.shape = None

    def update(self, g) -> tuple[Optional[float], bool]:
        """Fold ``g`` into the average; returns ``(ratio, triggered)``.

        The ratio ``||g|| / ||g_avg||`` is measured before ``g`` is folded in.
        The first observation only initializes the average and returns
        ``(None, False)``.
        """
        G = as_matrix(g, "g")
        g_norm = float(np.sqrt(np.sum(G * G)))
        if self.g_avg is None:
            self.shape = G.shape
            self.g_avg = np.array(g_norm) if self.norm_ewma else G.copy()
            self.step = 1
            return None, False
        if G.shape != self.shape:
            raise InvalidArgumentError(f"gradient shape {G.shape} != tracked shape {self.shape}")
        avg_norm = float(self.g_avg) if self.norm_ewma else float(np.sqrt(np.sum(self.g_avg**2)))
        if avg_norm == 0.0:
            raise DegenerateStateError("EWMA gradient norm is zero; re-initialize the tracker")
        ratio = g_norm / avg_norm
        triggered = ratio >= self.tau
        new = g_norm if self.norm_ewma else G
        self.g_avg = (1.0 - self.alpha) * self.g_avg + self.alpha * new
        self.step += 1
        return ratio, bool(triggered)


def tracker_update(tracker: GradTracker, g) -> tuple[Optional[float], bool]:
    return tracker.update(g)

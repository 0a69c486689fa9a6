"""One-layer transformer with a truncated-linear softmax.

Tokens live in the span of an orthonormal semantic basis ``{beta_t}`` with
prominences ``{mu_t}``. The attention score vector is
``omega = X W_QK x_T / sqrt(d)`` and softmax is replaced by its first-order
expansion at the origin, ``S(omega) ~ Gamma^T omega + 1/T``, where a slope
is zeroed whenever its linear term leaves ``[-c, c]``. The model output for
the last position is ``W_F (W_V X^T S(omega) + x_T)`` with
``W_F = W_F2 W_F1 + I``.

Batched routines take a :class:`Batch` of stacked arrays so that
expectations over sequences are single vectorized reductions in a fixed
order (bitwise reproducible per seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np

from .diagnostics import check_symmetric_psd
from .errors import CapacityError, InvalidArgumentError, InvalidInputError
from .linalg import RandomSource, as_matrix, orthonormal_columns

BRUTEFORCE_MAX_T = 16
FD_MAX_D = 32


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SemanticBasis:
    betas: np.ndarray  # (d, d), column t is beta_t
    alphas: np.ndarray  # (T, d), column t is alpha_t
    mus: np.ndarray  # (d,), non-increasing

    @property
    def d(self) -> int:
        return self.betas.shape[0]

    @property
    def T(self) -> int:
        return self.alphas.shape[0]

    @property
    def Z(self) -> np.ndarray:
        """Expected representation ``sum_t mu_t alpha_t beta_t^T`` (T x d)."""
        return (self.alphas * self.mus) @ self.betas.T

    @property
    def sr_z(self) -> float:
        return float(np.sum(self.mus**2) / self.mus[0] ** 2)

    @property
    def feature_gram(self) -> np.ndarray:
        """``sum_t mu_t^2 beta_t beta_t^T``."""
        return (self.betas * self.mus**2) @ self.betas.T


def gen_basis(d: int, T: int, spectrum: Union[float, Sequence[float]], rng: RandomSource) -> SemanticBasis:
    """Random orthonormal bases with prominences from ``spectrum``.

    ``spectrum`` is either a geometric ratio ``r`` (``mu_t = r**(t-1)``) or
    an explicit list of ``d`` values.
    """
    if T <= d:
        raise InvalidArgumentError(f"need T > d, got T={T}, d={d}")
    if np.isscalar(spectrum):
        r = float(spectrum)
        if not 0 < r <= 1:
            raise InvalidArgumentError(f"geometric ratio must be in (0, 1], got {r}")
        mus = r ** np.arange(d, dtype=float)
    else:
        mus = np.asarray(spectrum, dtype=float)
        if mus.shape != (d,):
            raise InvalidArgumentError(f"spectrum must have {d} values, got {mus.shape}")
    if np.any(mus <= 0) or np.any(np.diff(mus) > 0):
        raise InvalidArgumentError("spectrum must be positive and non-increasing")
    betas = orthonormal_columns(d, d, rng)
    alphas = orthonormal_columns(T, d, rng)
    return SemanticBasis(betas=betas, alphas=alphas, mus=mus)


@dataclass(frozen=True)
class SequenceSample:
    X: np.ndarray  # (T, d)
    y: np.ndarray  # (d,)


@dataclass(frozen=True)
class Batch:
    X: np.ndarray  # (B, T, d)
    Y: np.ndarray  # (B, d)

    def __len__(self) -> int:
        return self.X.shape[0]

    @classmethod
    def from_samples(cls, samples: Iterable[SequenceSample]) -> "Batch":
        samples = list(samples)
        if not samples:
            raise InvalidArgumentError("empty batch")
        return cls(np.stack([s.X for s in samples]), np.stack([s.y for s in samples]))

    def samples(self) -> list[SequenceSample]:
        return [SequenceSample(self.X[b], self.Y[b]) for b in range(len(self))]


def as_batch(batch) -> Batch:
    if isinstance(batch, Batch):
        b = batch
    elif isinstance(batch, SequenceSample):
        b = Batch(batch.X[None], batch.y[None])
    else:
        b = Batch.from_samples(batch)
    if len(b) == 0:
        raise InvalidArgumentError("empty batch")
    return b


def _coefficients(basis: SemanticBasis, shape: tuple, mode: str, zeta: float, rng: RandomSource) -> np.ndarray:
    xi = rng.standard_normal(shape + (basis.d,))
    if mode == "mean_mu":
        return basis.mus * (1.0 + zeta * xi)
    if mode == "zero_mean":
        return basis.mus * xi
    raise InvalidArgumentError(f"unknown sampling mode {mode!r}")


def sample_batch(
    basis: SemanticBasis,
    n: int,
    mode: str = "mean_mu",
    zeta: float = 0.3,
    rng: RandomSource = None,
) -> Batch:
    """Draw ``n`` sequences of ``T + 1`` tokens; the last token is the target.

    ``mean_mu``: coefficients ``mu_t (1 + zeta xi)``, so ``E[c_t] = mu_t``.
    ``zero_mean``: coefficients ``mu_t xi``, so second moments carry the spectrum.
    """
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    C = _coefficients(basis, (n, basis.T + 1), mode, zeta, rng)
    tokens = C @ basis.betas.T
    return Batch(X=tokens[:, :-1, :].copy(), Y=tokens[:, -1, :].copy())


def sample_sequence(basis: SemanticBasis, mode: str = "mean_mu", zeta: float = 0.3, rng: RandomSource = None) -> SequenceSample:
    b = sample_batch(basis, 1, mode, zeta, rng)
    return SequenceSample(b.X[0], b.Y[0])


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyParams:
    W_QK: np.ndarray
    W_V: np.ndarray
    W_F1: np.ndarray
    W_F2: np.ndarray

    @property
    def d(self) -> int:
        return self.W_QK.shape[0]

    @property
    def W_F(self) -> np.ndarray:
        return self.W_F2 @ self.W_F1 + np.eye(self.d)

    def replace(self, **kw) -> "ToyParams":
        return replace(self, **kw)


def init_params(d: int, rng: RandomSource, gain: float = 0.5, qk_gain: float = 1.0) -> ToyParams:
    """Scaled Gaussian ``W_V, W_F1, W_F2``; ``W_QK = qk_gain * G^T G / d`` (PSD)."""
    s = gain / math.sqrt(d)
    W_V = s * rng.standard_normal((d, d))
    W_F1 = s * rng.standard_normal((d, d))
    W_F2 = s * rng.standard_normal((d, d))
    G = rng.standard_normal((d, d))
    W_QK = qk_gain * (G.T @ G) / d
    return ToyParams(W_QK=0.5 * (W_QK + W_QK.T), W_V=W_V, W_F1=W_F1, W_F2=W_F2)


def _check_params(params: ToyParams, d: int) -> None:
    for name in ("W_QK", "W_V", "W_F1", "W_F2"):
        M = getattr(params, name)
        if M.shape != (d, d):
            raise InvalidArgumentError(f"{name} has shape {M.shape}, expected {(d, d)}")


# ---------------------------------------------------------------------------
# truncated-linear softmax
# ---------------------------------------------------------------------------


class SoftmaxApproxResult(NamedTuple):
    s_tilde: np.ndarray  # (T,)
    gamma: np.ndarray  # (T, T); column i is gamma~^i, entry [a, i] is gamma~^i_a
    gamma0: np.ndarray  # (T,)


def truncation_masks(omega: np.ndarray, c: float) -> tuple[np.ndarray, np.ndarray]:
    """Untruncated flags for the diagonal and off-diagonal slopes.

    ``diag[..., i]``: ``(T-1)/T^2 omega_i + 1/T^2`` lies in ``[-c, c]``.
    ``off[..., a]``: ``-1/T^2 omega_a + 1/T^2`` lies in ``[-c, c]``.
    """
    if not c > 0:
        raise InvalidArgumentError(f"truncation threshold must be positive, got {c}")
    T = omega.shape[-1]
    T2 = float(T * T)
    diag = np.abs((T - 1) / T2 * omega + 1.0 / T2) <= c
    off = np.abs(-omega / T2 + 1.0 / T2) <= c
    return diag, off


def approx_softmax(omega, c: float) -> SoftmaxApproxResult:
    """Truncated first-order softmax ``Gamma^T omega + gamma0`` for one score vector."""
    w = np.asarray(omega, dtype=float)
    if w.ndim != 1:
        raise InvalidArgumentError("omega must be a vector")
    T = w.shape[0]
    diag, off = truncation_masks(w, c)
    gamma = np.where(off[:, None], -1.0 / T**2, 0.0) * np.ones((1, T))
    np.fill_diagonal(gamma, np.where(diag, (T - 1) / T**2, 0.0))
    gamma0 = np.full(T, 1.0 / T)
    return SoftmaxApproxResult(gamma.T @ w + gamma0, gamma, gamma0)


def _slope_column_sums(diag: np.ndarray, off: np.ndarray) -> np.ndarray:
    # s_i = sum_a gamma~^i_a with an integer numerator, so no truncation gives exactly 0
    T = diag.shape[-1]
    n_off = off.sum(axis=-1, keepdims=True) - off
    return (diag * (T - 1) - n_off) / float(T * T)


def _scores(W_QK: np.ndarray, X: np.ndarray) -> np.ndarray:
    d = X.shape[-1]
    q = X[:, -1, :] @ W_QK.T  # W_QK x_T per sequence
    return np.einsum("btd,bd->bt", X, q) / math.sqrt(d)


def _mixed_tokens(X: np.ndarray, diag: np.ndarray, off: np.ndarray) -> np.ndarray:
    """``g_i = sum_a gamma~^i_a x_a`` for every position, without forming Gamma."""
    T = X.shape[1]
    T2 = float(T * T)
    off_sum = np.einsum("bt,btd->bd", off.astype(float), X)
    own = (diag * (T - 1.0) + off) / T2  # a = i term with the off-diagonal part added back
    return own[..., None] * X - off_sum[:, None, :] / T2


def _forward_batch(params: ToyParams, X: np.ndarray, c: float) -> np.ndarray:
    T = X.shape[1]
    omega = _scores(params.W_QK, X)
    diag, off = truncation_masks(omega, c)
    T2 = float(T * T)
    # S_i = sum_a Gamma[a, i] omega_a + 1/T
    off_dot = np.sum(off * omega, axis=1, keepdims=True)
    s = ((diag * (T - 1.0) + off) * omega - off_dot) / T2 + 1.0 / T
    attn = np.einsum("bt,btd->bd", s, X) @ params.W_V.T
    return (attn + X[:, -1, :]) @ params.W_F.T


def forward(params: ToyParams, X, c: float) -> np.ndarray:
    """Model output at the last position for one sequence ``X`` (T x d)."""
    X = as_matrix(X, "X")
    _check_params(params, X.shape[1])
    omega = X @ params.W_QK @ X[-1] / math.sqrt(X.shape[1])
    s = approx_softmax(omega, c).s_tilde
    return params.W_F @ (params.W_V @ (X.T @ s) + X[-1])


def loss(params: ToyParams, batch, c: float) -> float:
    """Batch mean of ``0.5 * ||y - F(A(X))_T||^2``."""
    b = as_batch(batch)
    _check_params(params, b.X.shape[2])
    r = b.Y - _forward_batch(params, b.X, c)
    return float(0.5 * np.mean(np.sum(r * r, axis=1)))


# ---------------------------------------------------------------------------
# QK gradient
# ---------------------------------------------------------------------------


def _qk_gradient_factored(params: ToyParams, X: np.ndarray, c: float) -> np.ndarray:
    B, T, d = X.shape
    omega = _scores(params.W_QK, X)
    diag, off = truncation_masks(omega, c)
    G = _mixed_tokens(X, diag, off)  # g_i
    H = X @ (params.W_F @ params.W_V).T  # h_i = W_F W_V x_i, so P_ij = h_i . h_j
    xT = X[:, -1, :]
    q = np.einsum("btd,bd->bt", G, xT @ params.W_QK.T)  # g_j^T W_QK x_T
    r = np.einsum("btd,bt->bd", H, q)  # sum_j h_j (g_j^T W_QK x_T)
    A = np.einsum("bti,btj->bij", H, G)  # sum_i h_i g_i^T
    left = np.einsum("bij,bi->bj", A, r)  # (sum_i g_i h_i^T) r
    return np.einsum("bi,bj->ij", left, xT) / (B * d)


def _qk_gradient_bruteforce(params: ToyParams, X: np.ndarray, c: float) -> np.ndarray:
    B, T, d = X.shape
    WfWv = params.W_F @ params.W_V
    M = WfWv.T @ WfWv
    total = np.zeros((d, d))
    for n in range(B):
        Xn = X[n]
        xT = Xn[-1]
        omega = Xn @ params.W_QK @ xT / math.sqrt(d)
        gam = approx_softmax(omega, c).gamma
        score = Xn @ params.W_QK @ xT  # x_b^T W_QK x_T
        coef = np.zeros(T)
        for i in range(T):
            for j in range(T):
                p_ij = Xn[i] @ M @ Xn[j]
                for a in range(T):
                    for b in range(T):
                        coef[a] += gam[a, i] * gam[b, j] * p_ij * score[b]
        for a in range(T):
            total += coef[a] * np.outer(Xn[a], xT)
    return total / (B * d)


def qk_gradient_mc(params: ToyParams, batch, c: float, method: str = "factored") -> np.ndarray:
    """Batch estimate of the simplified QK-gradient.

    ``(1/d) sum_{i,j,a,b} E[g~^i_a g~^j_b P_ij (x_b^T W_QK x_T) x_a x_T^T]``
    with ``P_ij = x_i^T W_V^T W_F^T W_F W_V x_j``. ``bruteforce`` runs the
    quadruple sum literally (T <= 16); ``factored`` regroups it as
    ``(sum_i g_i h_i^T)(sum_j h_j g_j^T W_QK x_T) x_T^T / d`` in O(T d^2).
    The result is not symmetric; see :func:`symmetrize`.
    """
    b = as_batch(batch)
    _check_params(params, b.X.shape[2])
    if method == "factored":
        return _qk_gradient_factored(params, b.X, c)
    if method == "bruteforce":
        if b.X.shape[1] > BRUTEFORCE_MAX_T:
            raise CapacityError(f"bruteforce limited to T <= {BRUTEFORCE_MAX_T}, got {b.X.shape[1]}")
        return _qk_gradient_bruteforce(params, b.X, c)
    raise InvalidArgumentError(f"unknown method {method!r}")


def symmetrize(G: np.ndarray) -> np.ndarray:
    """Gradient with respect to a symmetric parameter: ``(G + G^T) / 2``."""
    return 0.5 * (G + G.T)


def p_values(params: ToyParams, batch, c: float) -> np.ndarray:
    """Per-sequence ``(1/d) sum_{i,j} s_i s_j P_ij`` with ``s_i = sum_a g~^i_a``."""
    b = as_batch(batch)
    d = b.X.shape[2]
    _check_params(params, d)
    omega = _scores(params.W_QK, b.X)
    diag, off = truncation_masks(omega, c)
    s = _slope_column_sums(diag, off)
    H = b.X @ (params.W_F @ params.W_V).T
    v = np.einsum("bt,btd->bd", s, H)
    return np.sum(v * v, axis=1) / d


def estimate_P(params: ToyParams, batch, c: float) -> tuple[float, float]:
    """Monte Carlo mean and standard error of the scalar P."""
    b = as_batch(batch)
    if len(b) < 2:
        raise InvalidArgumentError("need at least two sequences for a standard error")
    vals = p_values(params, b, c)
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(len(vals)))


def untruncated_fraction(params: ToyParams, batch, c: float) -> float:
    """Share of the T x T slopes of Gamma that survive truncation."""
    b = as_batch(batch)
    T = b.X.shape[1]
    diag, off = truncation_masks(_scores(params.W_QK, b.X), c)
    kept = diag.sum(axis=1) + (T - 1) * off.sum(axis=1)
    return float(np.mean(kept) / (T * T))


def calibrate_c(params: ToyParams, batch, target: float = 0.5, iters: int = 100) -> float:
    """Bisect (in log space) for the threshold keeping ``target`` of the slopes."""
    if not 0 < target < 1:
        raise InvalidArgumentError(f"target must be in (0, 1), got {target}")
    b = as_batch(batch)
    lo, hi = 1e-12, 1.0
    while untruncated_fraction(params, b, hi) < target:
        hi *= 10.0
        if hi > 1e12:
            raise InvalidArgumentError("could not bracket the calibration target")
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        if untruncated_fraction(params, b, mid) < target:
            lo = mid
        else:
            hi = mid
    return hi


class StructuredGradient(NamedTuple):
    grad: np.ndarray
    S: float  # sum_k lambda_k (v_k^T p)^2, p = sum_r mu_r beta_r
    feature_gram: np.ndarray  # sum_t mu_t^2 beta_t beta_t^T
    p_value: float


def qk_gradient_structured(params: ToyParams, basis: SemanticBasis, p_value: float) -> StructuredGradient:
    """Gradient after substituting token coefficients by their means.

    ``P * [sum_k lambda_k sum_{r,s} mu_r mu_s (beta_r^T v_k)(v_k^T beta_s)] * sum_t mu_t^2 beta_t beta_t^T``
    where ``(lambda_k, v_k)`` are the eigenpairs of ``W_QK``.
    """
    W, _ = check_symmetric_psd(params.W_QK)
    if W.shape[0] != basis.d:
        raise InvalidArgumentError(f"W_QK is {W.shape}, basis has d={basis.d}")
    lam, V = np.linalg.eigh(W)
    p = basis.betas @ basis.mus
    S = float(np.sum(lam * (V.T @ p) ** 2))
    F = basis.feature_gram
    return StructuredGradient(grad=p_value * S * F, S=S, feature_gram=F, p_value=float(p_value))


def project_psd(W: np.ndarray) -> np.ndarray:
    """Nearest symmetric PSD matrix (eigenvalues clamped at zero)."""
    Ws = 0.5 * (W + W.T)
    lam, V = np.linalg.eigh(Ws)
    if lam[0] >= 0.0:
        return Ws
    out = (V * np.maximum(lam, 0.0)) @ V.T
    return 0.5 * (out + out.T)


def sgd_step(params: ToyParams, grad, eta: float) -> ToyParams:
    """``W_QK <- proj_PSD(W_QK - eta * grad)``; the other weights are untouched."""
    G = as_matrix(grad, "grad")
    if G.shape != params.W_QK.shape:
        raise InvalidArgumentError(f"grad shape {G.shape} != W_QK shape {params.W_QK.shape}")
    if np.linalg.norm(G - G.T) > 1e-10 * max(np.linalg.norm(G), 1e-300):
        raise InvalidArgumentError("W_QK gradient must be symmetric")
    if eta < 0:
        raise InvalidArgumentError(f"eta must be non-negative, got {eta}")
    if eta == 0:
        return params
    return params.replace(W_QK=project_psd(params.W_QK - eta * G))


def fd_gradient(params: ToyParams, batch, c: float, h: float = 1e-5) -> np.ndarray:
    """Central differences of :func:`loss` along each symmetric coordinate pair of W_QK."""
    d = params.d
    if h <= 0:
        raise InvalidArgumentError(f"h must be positive, got {h}")
    if d > FD_MAX_D:
        raise CapacityError(f"fd_gradient limited to d <= {FD_MAX_D}, got {d}")
    b = as_batch(batch)
    out = np.zeros((d, d))
    for p in range(d):
        for q in range(p, d):
            E = np.zeros((d, d))
            E[p, q] = E[q, p] = 1.0
            up = loss(params.replace(W_QK=params.W_QK + h * E), b, c)
            dn = loss(params.replace(W_QK=params.W_QK - h * E), b, c)
            deriv = (up - dn) / (2 * h)
            # an off-diagonal pair moves two entries at once
            out[p, q] = out[q, p] = deriv if p == q else 0.5 * deriv
    return out

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_sentinel import toymodel as tm
from spectral_sentinel.diagnostics import stable_rank
from spectral_sentinel.errors import CapacityError, InvalidArgumentError
from spectral_sentinel.linalg import make_rng
from spectral_sentinel.theoremlab import TheoremConfig, build_aligned_state


def small_setup(seed, T=8, d=4, B=3, mode="zero_mean"):
    rng = make_rng(seed)
    basis = tm.gen_basis(d, T, 0.7, rng)
    params = tm.init_params(d, rng, gain=1.0)
    batch = tm.sample_batch(basis, B, mode, 0.3, rng)
    return basis, params, batch


def test_gen_basis_shapes_and_orthonormality():
    b = tm.gen_basis(5, 12, 0.5, make_rng(0))
    assert np.allclose(b.betas.T @ b.betas, np.eye(5), atol=1e-12)
    assert np.allclose(b.alphas.T @ b.alphas, np.eye(5), atol=1e-12)
    assert b.sr_z == pytest.approx(stable_rank(b.Z).stable_rank, rel=1e-9)
    assert np.allclose(b.feature_gram, b.Z.T @ b.Z, atol=1e-12)
    with pytest.raises(InvalidArgumentError):
        tm.gen_basis(5, 5, 0.5, make_rng(0))
    with pytest.raises(InvalidArgumentError):
        tm.gen_basis(3, 8, [1.0, 2.0, 0.5], make_rng(0))


def test_sampler_is_deterministic_and_shaped():
    b = tm.gen_basis(4, 9, 0.5, make_rng(1))
    x1 = tm.sample_batch(b, 5, "mean_mu", 0.3, make_rng(2))
    x2 = tm.sample_batch(b, 5, "mean_mu", 0.3, make_rng(2))
    assert x1.X.shape == (5, 9, 4) and x1.Y.shape == (5, 4)
    assert np.array_equal(x1.X, x2.X) and np.array_equal(x1.Y, x2.Y)
    with pytest.raises(InvalidArgumentError):
        tm.sample_batch(b, 2, "bogus", 0.3, make_rng(0))


def test_sampler_moments():
    b = tm.gen_basis(3, 4, [1.0, 0.5, 0.2], make_rng(3))
    big = tm.sample_batch(b, 20_000, "mean_mu", 0.3, make_rng(4))
    coef = big.X.reshape(-1, 3) @ b.betas
    assert np.allclose(coef.mean(axis=0), b.mus, atol=0.01)
    zero = tm.sample_batch(b, 20_000, "zero_mean", 0.3, make_rng(5))
    coef = zero.X.reshape(-1, 3) @ b.betas
    assert np.allclose(coef.std(axis=0), b.mus, rtol=0.02)


def test_approx_softmax_untruncated_matches_linearization():
    w = np.array([0.3, -0.2, 0.1, 0.0])
    T = len(w)
    res = tm.approx_softmax(w, math.inf)
    expected = (np.eye(T) - 1.0 / T) @ w / T + 1.0 / T
    assert np.allclose(res.s_tilde, expected, atol=1e-15)
    assert np.allclose(res.gamma.sum(axis=0), 0.0, atol=1e-15)
    near = np.exp(1e-4 * w) / np.exp(1e-4 * w).sum()
    assert np.allclose(tm.approx_softmax(1e-4 * w, math.inf).s_tilde, near, atol=1e-9)


def test_truncation_masks_threshold():
    T = 4
    w = np.array([0.0, 100.0, -100.0, 1.0])
    diag, off = tm.truncation_masks(w, 1.0 / T**2)
    assert diag[0] and not diag[1] and not diag[2]
    assert off[0] and not off[1] and not off[2]
    with pytest.raises(InvalidArgumentError):
        tm.truncation_masks(w, 0.0)


def test_approx_softmax_linear_when_pattern_fixed():
    rng = make_rng(7)
    w1, w2 = 1e-3 * rng.standard_normal(6), 1e-3 * rng.standard_normal(6)
    a, b = 0.7, -0.4
    r1, r2 = tm.approx_softmax(w1, 1.0), tm.approx_softmax(w2, 1.0)
    r = tm.approx_softmax(a * w1 + b * w2, 1.0)
    assert np.allclose(r.s_tilde, a * r1.gamma.T @ w1 + b * r2.gamma.T @ w2 + r.gamma0, atol=1e-15)


def test_forward_batched_matches_single_and_loss_example():
    _, params, batch = small_setup(0)
    out = tm._forward_batch(params, batch.X, 0.01)
    for i, s in enumerate(batch.samples()):
        assert np.allclose(out[i], tm.forward(params, s.X, 0.01), atol=1e-14)
    d = 3
    zero = tm.ToyParams(np.zeros((d, d)), np.zeros((d, d)), np.zeros((d, d)), np.zeros((d, d)))
    X = np.zeros((5, d))
    sample = tm.SequenceSample(X, np.array([3.0, 4.0, 0.0]))
    assert tm.loss(zero, [sample], 1.0) == 12.5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([0.002, 0.01, 0.05, math.inf]))
def test_factored_gradient_equals_bruteforce(seed, c):
    _, params, batch = small_setup(seed)
    fac = tm.qk_gradient_mc(params, batch, c, "factored")
    bru = tm.qk_gradient_mc(params, batch, c, "bruteforce")
    assert np.max(np.abs(fac - bru)) <= 1e-10


def test_gradient_trivial_zeros():
    _, params, batch = small_setup(1)
    assert not np.any(tm.qk_gradient_mc(params.replace(W_V=np.zeros((4, 4))), batch, 0.01))
    assert not np.any(tm.qk_gradient_mc(params, batch, 1e-30))


def test_bruteforce_capacity_and_method():
    rng = make_rng(0)
    b = tm.gen_basis(4, 20, 0.5, rng)
    p = tm.init_params(4, rng)
    batch = tm.sample_batch(b, 1, rng=rng)
    with pytest.raises(CapacityError):
        tm.qk_gradient_mc(p, batch, 1.0, "bruteforce")
    with pytest.raises(InvalidArgumentError):
        tm.qk_gradient_mc(p, batch, 1.0, "bogus")


def test_p_is_exactly_zero_without_truncation():
    _, params, batch = small_setup(2, B=50)
    assert tm.estimate_P(params, batch, math.inf) == (0.0, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.floats(1e-4, 1.0))
def test_p_values_are_squared_norms(seed, c):
    # per sequence P is (1/d) ||sum_i s_i h_i||^2, so it can never be negative
    _, params, batch = small_setup(seed, B=20)
    vals = tm.p_values(params, batch, c)
    assert np.all(vals >= 0.0)
    X = batch.X[0]
    omega = X @ params.W_QK @ X[-1] / math.sqrt(4)
    gam = tm.approx_softmax(omega, c).gamma
    s = gam.sum(axis=0)
    WfWv = params.W_F @ params.W_V
    P = X @ WfWv.T @ WfWv @ X.T
    assert vals[0] == pytest.approx(float(s @ P @ s) / 4, rel=1e-10, abs=1e-300)


def test_calibrate_c_hits_target_fraction():
    _, params, batch = small_setup(3, T=32, d=8, B=64)
    c = tm.calibrate_c(params, batch, 0.5)
    assert abs(tm.untruncated_fraction(params, batch, c) - 0.5) <= 0.05
    assert tm.untruncated_fraction(params, batch, math.inf) == 1.0
    with pytest.raises(InvalidArgumentError):
        tm.calibrate_c(params, batch, 1.0)


def test_structured_gradient_eigenvectors_are_betas():
    cfg = TheoremConfig(d=16, T=32)
    state = build_aligned_state(cfg, 0)
    params = tm.init_params(16, make_rng(0)).replace(W_QK=state.W_QK)
    sg = tm.qk_gradient_structured(params, state.basis, -0.5)
    B = state.basis.betas
    inner = B.T @ sg.grad @ B
    assert np.max(np.abs(inner - np.diag(np.diag(inner)))) <= 1e-9 * np.abs(inner).max()
    lam, V = np.linalg.eigh(state.W_QK)
    p = B @ state.basis.mus
    assert sg.S == pytest.approx(float(p @ state.W_QK @ p), rel=1e-12)
    assert sg.S == pytest.approx(float(np.sum(lam * (V.T @ p) ** 2)), rel=1e-12)


def test_direction_consistency_with_structured_gradient():
    cfg = TheoremConfig(d=32, T=64, phi=0.95)
    state = build_aligned_state(cfg, 1)
    params = tm.init_params(32, make_rng(5), gain=0.5).replace(W_QK=state.W_QK)
    rng = make_rng(6)
    c = tm.calibrate_c(params, tm.sample_batch(state.basis, 512, "zero_mean", 0.3, rng))
    batch = tm.sample_batch(state.basis, 4096, "zero_mean", 0.3, rng)
    G = tm.symmetrize(tm.qk_gradient_mc(params, batch, c))
    P, _ = tm.estimate_P(params, batch, c)
    S = tm.qk_gradient_structured(params, state.basis, P).grad
    cos = float(np.sum(G * S) / (np.linalg.norm(G) * np.linalg.norm(S)))
    assert cos >= 0.9


def test_sgd_step_examples_and_invariants():
    p = tm.ToyParams(np.eye(2), np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)))
    out = tm.sgd_step(p, np.diag([2.0, 0.0]), 1.0)
    assert np.array_equal(out.W_QK, np.diag([0.0, 1.0]))
    assert tm.sgd_step(p, np.eye(2), 0.0) is p
    with pytest.raises(InvalidArgumentError):
        tm.sgd_step(p, np.array([[0.0, 1.0], [0.0, 0.0]]), 0.1)
    with pytest.raises(InvalidArgumentError):
        tm.sgd_step(p, np.eye(2), -1.0)
    rng = make_rng(3)
    G = tm.symmetrize(rng.standard_normal((6, 6)))
    W = tm.project_psd(tm.symmetrize(rng.standard_normal((6, 6))))
    q = tm.sgd_step(p.replace(W_QK=W), G, 0.7)
    assert np.array_equal(q.W_QK, q.W_QK.T)
    assert np.linalg.eigvalsh(q.W_QK)[0] >= -1e-12


def test_sgd_small_step_matches_first_order_eigen_update():
    rng = make_rng(9)
    W = tm.project_psd(np.diag([3.0, 2.0, 1.0, 0.5]) + 0.0)
    G = tm.symmetrize(rng.standard_normal((4, 4)))
    p = tm.ToyParams(W, np.eye(4), np.zeros((4, 4)), np.zeros((4, 4)))
    lam, V = np.linalg.eigh(W)
    errs = []
    for eta in (1e-3, 5e-4):
        pred = lam + np.einsum("il,ij,jl->l", V, -eta * G, V)
        errs.append(np.max(np.abs(np.linalg.eigvalsh(tm.sgd_step(p, G, eta).W_QK) - pred)))
    assert 3.0 <= errs[0] / errs[1] <= 5.0


def test_fd_gradient_trivial_and_richardson():
    _, params, batch = small_setup(4)
    flat = params.replace(W_V=np.zeros((4, 4)))
    assert np.max(np.abs(tm.fd_gradient(flat, batch, 1e-30))) <= 1e-8
    # with fixed truncation the loss is quartic in W_QK, so central differences are O(h^2)
    h = 1e-2
    g1 = tm.fd_gradient(params, batch, math.inf, h)
    g2 = tm.fd_gradient(params, batch, math.inf, h / 2)
    g4 = tm.fd_gradient(params, batch, math.inf, h / 4)
    extrap = (4 * g4 - g2) / 3
    ratio = np.max(np.abs(g2 - extrap)) / np.max(np.abs(g4 - extrap))
    assert 3.0 <= ratio <= 5.5
    assert np.array_equal(g1, g1.T)
    with pytest.raises(CapacityError):
        tm.fd_gradient(tm.init_params(33, make_rng(0)), None, 1.0)

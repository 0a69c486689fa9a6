import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_sentinel.diagnostics import (
    GradTracker,
    key_stable_rank,
    repr_singularity,
    singularity_alignment,
    stable_rank,
    tracker_update,
)
from spectral_sentinel.errors import (
    CapacityError,
    DegenerateInputError,
    DegenerateStateError,
    InvalidArgumentError,
    InvalidInputError,
)
from spectral_sentinel.linalg import full_svd, make_rng, orthonormal_columns


def test_stable_rank_examples():
    assert stable_rank(np.eye(4)).stable_rank == pytest.approx(4.0, rel=1e-12)
    r = stable_rank(np.diag([4.0, 2.0, 0.0]))
    assert r.stable_rank == pytest.approx(1.25, rel=1e-9)
    assert r.fro_norm == pytest.approx(np.sqrt(20.0), rel=1e-15)
    assert stable_rank(np.ones((3, 5))).stable_rank == pytest.approx(1.0, rel=1e-12)


def test_stable_rank_zero_matrix():
    with pytest.raises(DegenerateInputError):
        stable_rank(np.zeros((3, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3), st.booleans())
def test_stable_rank_scale_and_orthogonal_invariance(seed, c, flip):
    rng = make_rng(seed)
    W = rng.standard_normal((12, 8)) * np.geomspace(1.0, 0.05, 8)
    ref = float(np.sum(full_svd(W).sigma ** 2) / full_svd(W).sigma[0] ** 2)
    sr = stable_rank(W).stable_rank
    assert abs(sr - ref) <= 1e-8 * ref
    cc = -c if flip else c
    assert abs(stable_rank(cc * W).stable_rank - sr) <= 1e-9 * sr
    Q, R = orthonormal_columns(12, 12, rng), orthonormal_columns(8, 8, rng)
    assert abs(stable_rank(Q @ W @ R.T).stable_rank - sr) <= 1e-8 * sr


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_stable_rank_bounds(seed):
    W = make_rng(seed).standard_normal((9, 6))
    sr = stable_rank(W).stable_rank
    assert 1.0 - 1e-12 <= sr <= np.linalg.matrix_rank(W) + 1e-9


def test_key_stable_rank_examples_and_consistency():
    assert key_stable_rank(np.eye(5)) == 5.0
    assert key_stable_rank(np.diag([9.0, 1.0])) == pytest.approx(10 / 9, rel=1e-15)
    W_K = make_rng(2).standard_normal((7, 5))
    assert key_stable_rank(W_K.T @ W_K) == pytest.approx(stable_rank(W_K).stable_rank, rel=1e-9)


def test_key_stable_rank_rejects_bad_inputs():
    with pytest.raises(InvalidInputError):
        key_stable_rank(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(InvalidInputError):
        key_stable_rank(np.diag([1.0, -1.0]))
    with pytest.raises(InvalidInputError):
        key_stable_rank(np.ones((2, 3)))
    with pytest.raises(DegenerateInputError):
        key_stable_rank(np.zeros((3, 3)))


def test_alignment_examples():
    W = np.diag([3.0, 1.0])
    assert singularity_alignment(W, W).phi == 1.0
    assert singularity_alignment(np.diag([3.0, 1.0]), np.diag([1.0, 3.0])).phi == pytest.approx(0.0, abs=1e-15)
    theta = 0.3
    v = np.array([np.cos(theta), np.sin(theta)])
    W2 = 5 * np.outer(v, v) + 0.1 * np.eye(2)
    assert singularity_alignment(W2, np.diag([2.0, 1.0])).phi == pytest.approx(np.cos(theta), rel=1e-12)


def test_alignment_scale_invariance():
    rng = make_rng(8)
    W, Z = rng.standard_normal((6, 5)), rng.standard_normal((9, 5))
    base = singularity_alignment(W, Z).phi
    # power-of-two scalings are exact in floating point, so phi is bitwise equal
    assert singularity_alignment(4.0 * W, 0.125 * Z).phi == base
    assert singularity_alignment(3.7 * W, 0.3 * Z).phi == pytest.approx(base, abs=1e-12)


def test_alignment_flags_ties_and_validates():
    assert singularity_alignment(np.eye(3), np.diag([2.0, 1.0, 0.5])).ill_conditioned
    assert not singularity_alignment(np.diag([2.0, 1.0]), np.diag([2.0, 1.0])).ill_conditioned
    with pytest.raises(InvalidArgumentError):
        singularity_alignment(np.eye(3), np.eye(4))
    with pytest.raises(DegenerateInputError):
        singularity_alignment(np.zeros((2, 2)), np.eye(2))


def test_repr_singularity_identity_matches_stable_rank():
    Z = make_rng(1).standard_normal((20, 6))
    assert repr_singularity(Z, np.eye(6)) == pytest.approx(stable_rank(Z).stable_rank, rel=1e-9)


def test_repr_singularity_matches_explicit_key_matrix():
    rng = make_rng(3)
    W_K = rng.standard_normal((6, 6))
    Z = rng.standard_normal((15, 6))
    Z_K = W_K @ Z.T
    assert repr_singularity(Z, W_K.T @ W_K) == pytest.approx(stable_rank(Z_K).stable_rank, rel=1e-9)


def test_repr_singularity_errors():
    with pytest.raises(InvalidArgumentError):
        repr_singularity(np.ones((4, 3)), np.eye(2))
    with pytest.raises(CapacityError):
        repr_singularity(np.ones((1025, 2)), np.eye(2))
    with pytest.raises(DegenerateInputError):
        repr_singularity(np.ones((4, 2)), np.zeros((2, 2)))


def test_tracker_first_update_warm_starts():
    t = GradTracker()
    assert t.update(np.ones((2, 2))) == (None, False)
    assert t.step == 1
    ratio, trig = t.update(np.ones((2, 2)))
    assert ratio == 1.0 and not trig


def test_tracker_ratio_uses_average_before_fold():
    t = GradTracker(alpha=0.5, tau=2.0)
    g = np.eye(2)
    t.update(g)
    ratio, trig = t.update(3 * g)
    assert ratio == pytest.approx(3.0) and trig
    assert np.allclose(t.g_avg, 2 * g)


def test_tracker_spike_fires_once():
    rng = make_rng(0)
    t = GradTracker(alpha=0.1, tau=2.0)
    fired = []
    for step in range(100):
        scale = 10.0 if step == 50 else 1.0 + 0.01 * rng.uniform(-1, 1)
        _, trig = tracker_update(t, scale * np.eye(3))
        if trig:
            fired.append(step)
    assert fired == [50]


def test_tracker_norm_variant_agrees_on_aligned_stream():
    a, b = GradTracker(), GradTracker(norm_ewma=True)
    for s in [1.0, 1.2, 0.9, 5.0, 1.0]:
        ra, _ = a.update(s * np.ones((2, 3)))
        rb, _ = b.update(s * np.ones((2, 3)))
        assert (ra is None and rb is None) or ra == pytest.approx(rb, rel=1e-12)


def test_tracker_replay_is_bitwise_identical():
    grads = [make_rng(i).standard_normal((4, 4)) for i in range(20)]

    def run():
        t = GradTracker()
        return [t.update(g) for g in grads]

    assert run() == run()


def test_tracker_errors_and_reset():
    with pytest.raises(InvalidArgumentError):
        GradTracker(alpha=0.0)
    with pytest.raises(InvalidArgumentError):
        GradTracker(tau=1.0)
    t = GradTracker()
    t.update(np.zeros((2, 2)))
    with pytest.raises(DegenerateStateError):
        t.update(np.ones((2, 2)))
    t.reset()
    assert t.g_avg is None and t.step == 0
    t.update(np.ones((2, 2)))
    with pytest.raises(InvalidArgumentError):
        t.update(np.ones((3, 3)))

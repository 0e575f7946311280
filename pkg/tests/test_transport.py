import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import extremedep as ed
from extremedep import transport
from helpers import brute_force_ot, random_marginal


def tanh_coupling(m):
    """Closed-form Gibbs coupling on uniform{-1,+1}^2 at T = 1."""
    e, ei = math.exp(m), math.exp(-m)
    z = 2 * (e + ei)
    return np.array([[e, ei], [ei, e]]) / z


# ---------------------------------------------------------------- kernel


def test_kernel_zero_affinity_is_constant(pm_one):
    P, Q = pm_one
    k = transport.kernel(P, Q, np.zeros((1, 1)), 1.0)
    assert np.all(k == k[0, 0])


def test_kernel_entries_are_products(pm_one):
    P, Q = pm_one
    expected = np.array([[1.0, -1.0], [-1.0, 1.0]])
    assert np.array_equal(transport.gains(P, Q, np.ones((1, 1))), expected)
    k = transport.kernel(P, Q, np.ones((1, 1)), 1.0)
    assert np.allclose(k - k.max(), expected - expected.max())


def test_kernel_shape_error(pm_one):
    P, Q = pm_one
    with pytest.raises(ed.ShapeError):
        transport.kernel(P, Q, np.ones((2, 1)), 1.0)


# ---------------------------------------------------------------- ipfp


def test_zero_affinity_gives_product(sample):
    P, Q = sample
    c = ed.ipfp_solve(P, Q, np.zeros((3, 3)), 0.7)
    assert np.allclose(c.probs, np.outer(P.weights, Q.weights), atol=1e-14)
    assert np.max(np.abs(ed.cross_cov(c, P, Q))) <= 1e-14


@pytest.mark.parametrize("m", [0.25, 1.0, -1.5, 3.0])
def test_tanh_closed_form(pm_one, m):
    P, Q = pm_one
    c = ed.ipfp_solve(P, Q, [[m]], 1.0)
    assert abs(ed.cross_cov(c, P, Q)[0, 0] - math.tanh(m)) <= 1e-8
    assert np.allclose(c.probs, tanh_coupling(m), atol=1e-10)


def test_tanh_value_m1(pm_one):
    P, Q = pm_one
    sigma = ed.cross_cov(ed.ipfp_solve(P, Q, [[1.0]], 1.0), P, Q)[0, 0]
    assert abs(sigma - 0.76159) <= 1e-5


def test_low_temperature_concentrates(pm_one):
    P, Q = pm_one
    c = ed.ipfp_solve(P, Q, [[1.0]], 1e-3)
    assert ed.cross_cov(c, P, Q)[0, 0] >= 1 - 1e-3
    assert c.probs[0, 1] + c.probs[1, 0] <= 1e-3


def test_marginal_residual_and_metadata(sample):
    P, Q = sample
    M = np.random.default_rng(0).normal(size=(3, 3))
    c = ed.ipfp_solve(P, Q, M, 0.5)
    assert c.marginal_residual(P, Q) <= transport.MARGINAL_TOL
    assert c.iterations > 0
    assert c.u.shape == (P.size,) and c.v.shape == (Q.size,)


def test_non_convergence_raises_with_residual(sample):
    P, Q = sample
    M = np.random.default_rng(1).normal(size=(3, 3))
    with pytest.raises(ed.ConvergenceError) as info:
        ed.ipfp_solve(P, Q, M, 0.01, max_iter=2, marginal_tol=1e-14)
    assert info.value.residual > 0


def test_low_temperature_no_overflow(sample):
    P, Q = sample
    M = np.random.default_rng(2).normal(size=(3, 3)) * 5
    c = ed.ipfp_solve(P, Q, M, 1e-3)
    assert np.all(np.isfinite(c.probs))
    assert c.marginal_residual(P, Q) <= transport.MARGINAL_TOL


def test_warm_start_matches_cold(sample):
    P, Q = sample
    M = np.random.default_rng(3).normal(size=(3, 3))
    hot = ed.ipfp_solve(P, Q, M, 0.3)
    warm = ed.ipfp_solve(P, Q, M, 0.1, warm_start=hot)
    cold = ed.ipfp_solve(P, Q, M, 0.1)
    assert np.allclose(warm.probs, cold.probs, atol=1e-9)


def test_gibbs_cross_ratio():
    rng = np.random.default_rng(4)
    P, Q = random_marginal(rng, 6, 2), random_marginal(rng, 5, 3)
    M, T = rng.normal(size=(2, 3)), 0.4
    c = ed.ipfp_solve(P, Q, M, T)
    lp = np.log(c.probs)
    x, y = P.atoms, Q.atoms
    for (i, k), (j, l) in [((0, 1), (0, 1)), ((2, 5), (1, 4)), ((3, 4), (0, 2))]:
        lhs = lp[i, j] + lp[k, l] - lp[i, l] - lp[k, j]
        rhs = (x[i] - x[k]) @ M @ (y[j] - y[l]) / T
        assert abs(lhs - rhs) <= 1e-6


def test_trace_duality():
    rng = np.random.default_rng(5)
    P, Q = random_marginal(rng, 7, 3, centered=False), random_marginal(rng, 4, 2, centered=False)
    c = ed.ipfp_solve(P, Q, rng.normal(size=(3, 2)), 1.0)
    sigma = ed.cross_cov(c, P, Q)
    for _ in range(10):
        M = rng.normal(size=(3, 2))
        direct = np.sum(c.probs * (P.atoms @ M @ Q.atoms.T))
        assert abs(np.trace(M.T @ sigma) - direct) <= 1e-10


def test_exact_dominates_entropic_and_gap_closes():
    rng = np.random.default_rng(6)
    P, Q = random_marginal(rng, 6, 2), random_marginal(rng, 6, 2)
    M = rng.normal(size=(2, 2))
    h, _ = ed.ot_exact(P, Q, M)
    gaps = []
    for T in [10.0, 1.0, 0.1, 0.01, 0.001]:
        val = transport.objective(ed.ipfp_solve(P, Q, M, T), P, Q, M)
        assert val <= h + 1e-12
        gaps.append(h - val)
    assert gaps[-1] <= 1e-3 * abs(h) and gaps[-1] < gaps[0]


# ---------------------------------------------------------------- exact OT


def test_exact_single_atoms():
    P = ed.DiscreteMarginal.uniform(np.array([[2.0, 1.0]]))
    Q = ed.DiscreteMarginal.uniform(np.array([[3.0]]))
    M = np.array([[1.0], [-2.0]])
    value, c = ed.ot_exact(P, Q, M)
    assert value == pytest.approx(2 * 3 - 2 * 3)
    assert c.probs.shape == (1, 1) and c.probs[0, 0] == 1.0


def test_exact_sorted_and_antitone():
    a, b, c_ = -1.0, 0.5, 2.0
    P = ed.DiscreteMarginal.uniform(np.array([[a], [b], [c_]]))
    value, c = ed.ot_exact(P, P, [[1.0]])
    assert value == pytest.approx((a * a + b * b + c_ * c_) / 3, abs=1e-15)
    assert np.allclose(c.probs, np.eye(3) / 3)
    value, c = ed.ot_exact(P, P, [[-1.0]])
    assert value == pytest.approx(-(a * c_ + b * b + c_ * a) / 3, abs=1e-15)
    assert value == pytest.approx(brute_force_ot(P, P, [[-1.0]]), abs=1e-15)


def test_exact_non_uniform_weights():
    # greedy north-west corner on sorted atoms is optimal in 1-D
    P = ed.DiscreteMarginal(np.array([[0.0], [1.0], [3.0]]), np.array([0.2, 0.5, 0.3]))
    Q = ed.DiscreteMarginal(np.array([[-1.0], [2.0]]), np.array([0.6, 0.4]))
    value, c = ed.ot_exact(P, Q, [[1.0]])
    nw = 0.2 * 0 * -1 + 0.4 * 1 * -1 + 0.1 * 1 * 2 + 0.3 * 3 * 2
    assert value == pytest.approx(nw, abs=1e-12)
    assert c.marginal_residual(P, Q) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 3), st.integers(1, 3))
def test_exact_matches_brute_force(seed, n, I, J):
    rng = np.random.default_rng(seed)
    P, Q = random_marginal(rng, n, I, centered=False), random_marginal(rng, n, J, centered=False)
    M = rng.normal(size=(I, J))
    value, c = ed.ot_exact(P, Q, M)
    assert abs(value - brute_force_ot(P, Q, M)) <= 1e-12 * (1 + abs(value))
    assert abs(value - transport.objective(c, P, Q, M)) <= 1e-12 * (1 + abs(value))


# ---------------------------------------------------------------- summaries


def test_cross_cov_examples():
    d = ed.DiscreteMarginal.uniform(np.array([[1.0, 0.0], [0.0, 1.0]]))
    diag = transport.Coupling(np.eye(2) / 2, 0.0)
    assert np.allclose(ed.cross_cov(diag, d, d), [[0.5, 0], [0, 0.5]])
    rng = np.random.default_rng(7)
    P, Q = random_marginal(rng, 5, 2), random_marginal(rng, 4, 3)
    assert np.max(np.abs(ed.cross_cov(ed.product_coupling(P, Q), P, Q))) <= 1e-15


def test_entropy_examples(pm_one):
    P, Q = pm_one
    assert ed.entropy(ed.product_coupling(P, Q)) == pytest.approx(math.log(4))
    n = 5
    perm = np.zeros((n, n))
    perm[np.arange(n), np.roll(np.arange(n), 2)] = 1 / n
    assert ed.entropy(transport.Coupling(perm, 0.0)) == pytest.approx(math.log(n))
    pi = tanh_coupling(1.0)
    c = ed.ipfp_solve(P, Q, [[1.0]], 1.0)
    assert ed.entropy(c) == pytest.approx(float(-np.sum(pi * np.log(pi))), abs=1e-10)


def test_w_examples(pm_one):
    P, Q = pm_one
    rng = np.random.default_rng(8)
    R = random_marginal(rng, 4, 2)
    S = random_marginal(rng, 3, 2)
    T = 0.6
    assert ed.eval_W(R, S, np.zeros((2, 2)), T) == pytest.approx(T * math.log(12), abs=1e-12)
    pi = tanh_coupling(1.0)
    closed = math.tanh(1.0) + float(-np.sum(pi * np.log(pi)))
    assert ed.eval_W(P, Q, [[1.0]], 1.0) == pytest.approx(closed, abs=1e-10)


def test_w_dual_matches_primal():
    rng = np.random.default_rng(9)
    P, Q = random_marginal(rng, 6, 2), random_marginal(rng, 5, 2)
    M, T = rng.normal(size=(2, 2)), 0.8
    c = ed.ipfp_solve(P, Q, M, T)
    primal = transport.objective(c, P, Q, M) + T * ed.entropy(c)
    assert transport.w_value(c, P, Q) == pytest.approx(primal, abs=1e-9)


def test_solve_dispatch(pm_one):
    P, Q = pm_one
    assert transport.solve(P, Q, [[1.0]], 0).temperature == 0.0
    assert transport.solve(P, Q, [[1.0]], 1.0).temperature == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 5.0))
def test_ipfp_properties(seed, T):
    rng = np.random.default_rng(seed)
    P, Q = random_marginal(rng, int(rng.integers(2, 9)), 2), random_marginal(rng, int(rng.integers(2, 9)), 2)
    M = rng.normal(size=(2, 2))
    c = ed.ipfp_solve(P, Q, M, T)
    assert c.marginal_residual(P, Q) <= transport.MARGINAL_TOL
    h, _ = ed.ot_exact(P, Q, M)
    assert transport.objective(c, P, Q, M) <= h + 1e-10
    assert ed.entropy(c) <= math.log(P.size * Q.size) + 1e-12

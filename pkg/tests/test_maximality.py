import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import extremedep as ed
from extremedep import maximality as mx
from helpers import random_marginal


def one_d(values):
    return ed.center(ed.DiscreteMarginal.uniform(np.asarray(values, dtype=float)[:, None]))


# ---------------------------------------------------------------- bases


def test_basis_vertices_and_norms():
    B = ed.ConicBasis.orthant(2, 3)
    V = B.vertices()
    assert len(V) == 6 and all(v.sum() == 1.0 for v in V)
    assert B.min_norm() == pytest.approx(1 / np.sqrt(6))
    L = ed.ConicBasis.loewner(3)
    assert np.trace(L.barycenter()) == pytest.approx(1.0)
    assert L.min_norm() == pytest.approx(1 / np.sqrt(3))


def test_basis_validation():
    with pytest.raises(ed.InputError):
        ed.ConicBasis("loewner", (2, 3))
    with pytest.raises(ed.InputError):
        ed.ConicBasis("nonsense", (2, 2))
    with pytest.raises(ed.InputError):
        # hull through the origin
        ed.ConicBasis("custom", (1, 1), [np.array([[1.0]]), np.array([[-1.0]])])


def test_custom_basis_min_norm():
    gens = [np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])]
    B = ed.ConicBasis("custom", (1, 2), gens)
    assert B.min_norm() == pytest.approx(1 / np.sqrt(2), abs=1e-6)


# ---------------------------------------------------------------- LMO


def test_lmo_orthant():
    G = np.array([[0.5, 2.0], [-3.0, 1.0], [0.0, 4.0]])
    M, value = ed.linear_minimize_over_basis(ed.ConicBasis.orthant(3, 2), G)
    E = np.zeros((3, 2))
    E[1, 0] = 1.0
    assert np.array_equal(M, E) and value == -3.0


def test_lmo_loewner_diagonal():
    M, value = ed.linear_minimize_over_basis(ed.ConicBasis.loewner(2), np.diag([3.0, -1.0]))
    assert np.allclose(M, [[0, 0], [0, 1]]) and value == pytest.approx(-1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_lmo_loewner_nonsymmetric(seed, n):
    G = np.random.default_rng(seed).normal(size=(n, n))
    M, value = ed.linear_minimize_over_basis(ed.ConicBasis.loewner(n), G)
    lam = np.linalg.eigvalsh((G + G.T) / 2)[0]
    assert abs(value - lam) <= 1e-10
    assert abs(float(np.sum(G * M)) - value) <= 1e-10
    assert np.trace(M) == pytest.approx(1.0) and np.linalg.eigvalsh(M)[0] >= -1e-12


def test_lmo_custom():
    gens = [np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]])]
    M, value = ed.linear_minimize_over_basis(ed.ConicBasis("custom", (1, 2), gens), np.array([[1.0, -1.0]]))
    assert np.array_equal(M, gens[1]) and value == 0.0


# ---------------------------------------------------------------- gap


def test_comonotone_gap_zero():
    P = one_d([-1, 1])
    g = ed.maximality_gap(P, P, [[1.0]], ed.ConicBasis.orthant(1, 1))
    assert g.verdict == "maximal" and g.gap <= 1e-12
    gap, witness = g
    assert np.array_equal(witness, [[1.0]])


def test_antitone_gap_two():
    P = one_d([-1, 1])
    g = ed.maximality_gap(P, P, [[-1.0]], ed.ConicBasis.orthant(1, 1))
    assert g.verdict == "not-maximal" and g.gap == pytest.approx(2.0, abs=1e-12)


def test_product_gap_equals_support_at_witness():
    rng = np.random.default_rng(2)
    P, Q = random_marginal(rng, 6, 2), random_marginal(rng, 5, 2)
    g = ed.maximality_gap(P, Q, np.zeros((2, 2)), ed.ConicBasis.orthant(2, 2))
    h, _ = ed.support(P, Q, g.witness_M)
    assert g.verdict == "not-maximal" and g.gap > 0
    assert g.gap == pytest.approx(h, abs=1e-12)
    assert g.lower_bound <= g.gap + 1e-12


def test_support_point_is_maximal_for_its_order():
    rng = np.random.default_rng(3)
    P, Q = random_marginal(rng, 7, 2), random_marginal(rng, 6, 2)
    _, sigma = ed.support(P, Q, np.array([[0.3, 0.1], [0.4, 0.2]]))
    g = ed.maximality_gap(P, Q, sigma, ed.ConicBasis.orthant(2, 2))
    assert g.verdict == "maximal" and g.duality_gap <= g.gap_tol


def test_gaussian_uniform_example_loewner():
    # X Gaussian in R^2, Y = (X_1, U) with U uniform and independent: the
    # coupling maximizes E[X' A Y] for A = diag(1, 0), a Loewner basis point
    rng = np.random.Generator(np.random.Philox(2024))
    n = 200
    x = rng.standard_normal((n, 2))
    u = rng.uniform(-1, 1, n)
    P = ed.center(ed.DiscreteMarginal.uniform(x))
    Q = ed.center(ed.DiscreteMarginal.uniform(np.column_stack([x[:, 0], u])))
    sigma = ed.target_cov(P, Q)
    g = ed.maximality_gap(P, Q, sigma, ed.ConicBasis.loewner(2))
    assert g.gap <= 5e-2


def test_inconclusive_when_budget_exhausted():
    rng = np.random.default_rng(4)
    P, Q = random_marginal(rng, 9, 3), random_marginal(rng, 9, 3)
    _, sigma = ed.support(P, Q, np.eye(3) + 0.1)
    g = ed.maximality_gap(P, Q, sigma, ed.ConicBasis.loewner(3), max_fw_iter=1, gap_tol=1e-14)
    assert g.verdict in {"maximal", "inconclusive"}
    assert g.iterations <= 1


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gap_values_nonnegative_for_attainable(seed):
    rng = np.random.default_rng(seed)
    P, Q = random_marginal(rng, 5, 2), random_marginal(rng, 5, 2)
    sigma = ed.cross_cov(ed.ipfp_solve(P, Q, rng.normal(size=(2, 2)), 0.5), P, Q)
    for B in (ed.ConicBasis.orthant(2, 2), ed.ConicBasis.loewner(2)):
        g = ed.maximality_gap(P, Q, sigma, B)
        assert g.gap >= -1e-9
        assert g.lower_bound <= g.gap + 1e-9
        if g.verdict == "maximal":
            assert g.duality_gap <= g.gap_tol


def test_gap_shape_error():
    P = one_d([-1, 1])
    with pytest.raises(ed.InputError):
        ed.maximality_gap(P, P, np.zeros((2, 1)), ed.ConicBasis.orthant(1, 1))


def test_gap_to_dict():
    P = one_d([-1, 1])
    d = ed.maximality_gap(P, P, [[1.0]], ed.ConicBasis.orthant(1, 1)).to_dict()
    assert {"verdict", "gap", "witness_M", "directions_probed"} <= d.keys()


# ---------------------------------------------------------------- extreme


def test_support_point_is_extreme():
    rng = np.random.default_rng(5)
    P, Q = random_marginal(rng, 6, 2), random_marginal(rng, 6, 2)
    M = rng.normal(size=(2, 2))
    _, sigma = ed.support(P, Q, M)
    v = ed.is_extreme(P, Q, sigma)
    assert v.verdict == "extreme"
    h, _ = ed.support(P, Q, v.direction)
    assert float(np.sum(sigma * v.direction)) == pytest.approx(h, abs=1e-8)


def test_entropic_coupling_is_not_extreme():
    rng = np.random.default_rng(6)
    P, Q = random_marginal(rng, 6, 2), random_marginal(rng, 6, 2)
    sigma = ed.cross_cov(ed.ipfp_solve(P, Q, rng.normal(size=(2, 2)), 1.0), P, Q)
    assert ed.is_extreme(P, Q, sigma).verdict == "not-extreme"
    assert ed.is_extreme(P, Q, np.zeros((2, 2))).verdict == "not-extreme"


def test_outside_point():
    P = one_d([-1, 1])
    assert ed.is_extreme(P, P, [[2.0]]).verdict == "outside"


def test_classify_comonotone_positive_extreme():
    P = one_d([-2, 0.5, 1.5])
    _, sigma = ed.support(P, P, [[1.0]])
    out = mx.classify(P, P, sigma, ed.ConicBasis.orthant(1, 1))
    assert out["verdict"] == "positive-extreme" and out["gap"] <= 1e-8
    assert out["boundary"]["verdict"] == "extreme"


def test_classify_antitone_is_extreme_not_positive():
    P = one_d([-2, 0.5, 1.5])
    _, sigma = ed.support(P, P, [[-1.0]])
    out = mx.classify(P, P, sigma, ed.ConicBasis.orthant(1, 1))
    assert out["verdict"] == "extreme"
    assert out["maximality"]["verdict"] == "not-maximal"


def test_unattainable_sigma_is_outside():
    P = one_d([-1, 1])
    g = ed.maximality_gap(P, P, [[1.5]], ed.ConicBasis.orthant(1, 1))
    assert g.verdict == "outside" and g.gap == pytest.approx(-0.5)
    out = mx.classify(P, P, [[1.5]], ed.ConicBasis.orthant(1, 1))
    assert out["verdict"] == "outside"

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wassbench.exact_ot import (
    DiscreteMeasure,
    SolverError,
    brute_force_solve,
    cost_matrix,
    exact_solve,
    wasserstein1,
)


def U(pts):
    return DiscreteMeasure.uniform(np.asarray(pts, dtype=float))


def test_cost_matrix_examples():
    assert cost_matrix(U([[0, 0]]), U([[3, 4]])).entries.tolist() == [[5.0]]
    assert cost_matrix(U([[0, 0]]), U([[3, 4]]), p=2).entries.tolist() == [[25.0]]
    X = np.random.default_rng(0).standard_normal((5, 3))
    assert not np.diag(cost_matrix(X, X).entries).any()
    with pytest.raises(ValueError):
        cost_matrix(np.ones((2, 2)), np.ones((2, 3)))


def test_measure_validation():
    with pytest.raises(ValueError):
        DiscreteMeasure(np.zeros((2, 1)), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        DiscreteMeasure(np.zeros((2, 1)), np.array([1.5, -0.5]))
    with pytest.raises(ValueError):
        DiscreteMeasure.uniform(np.zeros((0, 2)))


def test_single_atoms():
    v, plan, _ = exact_solve(U([[0.0]]), U([[2.5]]), cost_matrix(U([[0.0]]), U([[2.5]])))
    assert v == 2.5
    assert plan.coupling.tolist() == [[1.0]]
    assert brute_force_solve(U([[0.0]]), U([[2.5]]), [[2.5]]) == 2.5


def test_line_example():
    mu, nu = U([0.0, 2.0]), U([1.0, 3.0])
    C = cost_matrix(mu, nu)
    assert exact_solve(mu, nu, C)[0] == pytest.approx(1.0, abs=1e-12)
    assert brute_force_solve(mu, nu, C) == pytest.approx(1.0, abs=1e-12)


def test_identical_measures():
    X = np.random.default_rng(1).standard_normal((6, 2))
    v, plan, _ = exact_solve(U(X), U(X), cost_matrix(X, X))
    assert v == 0.0
    np.testing.assert_allclose(plan.coupling, np.eye(6) / 6)


@pytest.mark.parametrize("n", [64, 512])
def test_translation_identity(n):
    X = np.random.default_rng(n).standard_normal((n, 2))
    v = np.array([1.0, 1.0])
    assert wasserstein1(X, X + v) == pytest.approx(math.sqrt(2), abs=1e-9)


def test_strong_duality_and_admissibility():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n, m = rng.integers(1, 12, size=2)
        mu = DiscreteMeasure(rng.standard_normal((n, 2)), rng.dirichlet(np.ones(n)))
        nu = DiscreteMeasure(rng.standard_normal((m, 2)), rng.dirichlet(np.ones(m)))
        C = cost_matrix(mu, nu)
        v, plan, duals = exact_solve(mu, nu, C)
        assert duals.phi[0] == 0.0
        assert np.all(duals.phi[:, None] + duals.psi[None, :] <= C.entries + 1e-12)
        assert duals.value(mu, nu) == pytest.approx(v, abs=1e-7)
        np.testing.assert_allclose(plan.coupling.sum(1), mu.weights, atol=1e-12)
        np.testing.assert_allclose(plan.coupling.sum(0), nu.weights, atol=1e-12)


def test_oracle_equivalence_random():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n, d = int(rng.integers(2, 7)), int(rng.integers(1, 4))
        mu, nu = U(rng.standard_normal((n, d))), U(rng.standard_normal((n, d)))
        C = cost_matrix(mu, nu)
        assert abs(exact_solve(mu, nu, C)[0] - brute_force_solve(mu, nu, C)) < 1e-9


def test_brute_force_refusals():
    with pytest.raises(ValueError):
        brute_force_solve(U(np.zeros((9, 1))), U(np.zeros((9, 1))), np.zeros((9, 9)))
    with pytest.raises(ValueError):
        brute_force_solve(U(np.zeros((2, 1))), U(np.zeros((3, 1))), np.zeros((2, 3)))
    mu = DiscreteMeasure(np.zeros((2, 1)), np.array([0.3, 0.7]))
    with pytest.raises(ValueError):
        brute_force_solve(mu, mu, np.zeros((2, 2)))


def test_shape_mismatch_and_non_convergence():
    mu, nu = U(np.zeros((2, 1))), U(np.ones((3, 1)))
    with pytest.raises(ValueError):
        exact_solve(mu, nu, np.zeros((3, 2)))
    rng = np.random.default_rng(0)
    mu, nu = U(rng.standard_normal((30, 2))), U(rng.standard_normal((30, 2)))
    with pytest.raises(SolverError, match="iterations"):
        exact_solve(mu, nu, cost_matrix(mu, nu), max_iter=2)


pts = st.integers(1, 6).flatmap(
    lambda n: arrays(np.float64, (n, 2), elements=st.floats(-5, 5, allow_nan=False))
)


@settings(max_examples=40, deadline=None)
@given(a=pts, b=pts, c=pts)
def test_metric_axioms(a, b, c):
    ab, ba = wasserstein1(a, b), wasserstein1(b, a)
    assert ab >= 0
    assert ab == pytest.approx(ba, abs=1e-9)
    assert wasserstein1(a, a) == pytest.approx(0.0, abs=1e-12)
    assert ab <= wasserstein1(a, c) + wasserstein1(c, b) + 1e-9


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    mu = DiscreteMeasure(rng.standard_normal((5, 3)), rng.dirichlet(np.ones(5)))
    back = DiscreteMeasure.from_csv(mu.to_csv(tmp_path / "m.csv") and tmp_path / "m.csv")
    assert np.array_equal(back.points, mu.points)
    assert np.array_equal(back.weights, mu.weights)
    plain = DiscreteMeasure.from_csv("1.5,2\n3,4\n")
    assert plain.is_uniform() and plain.size == 2

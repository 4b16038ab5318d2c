import math

import numpy as np
import pytest

from wassbench.entropic_ot import (
    DivergenceTerms,
    EntropicConfig,
    c_eps_transform,
    c_transform,
    entropic_dual_value,
    self_ot_symmetric_step,
    self_ot_solve,
    sinkhorn_divergence,
    sinkhorn_divergence_terms,
    sinkhorn_solve,
)
from wassbench.exact_ot import DiscreteMeasure, cost_matrix, exact_solve


def U(pts):
    return DiscreteMeasure.uniform(np.asarray(pts, dtype=float))


def random_pair(seed, n=5, d=2):
    rng = np.random.default_rng(seed)
    return U(rng.standard_normal((n, d))), U(rng.standard_normal((n, d)))


@pytest.mark.parametrize("eps", [1e-3, 0.1, 1.0, 100.0])
def test_single_atoms_any_eps(eps):
    mu, nu = U([[0.0, 0.0]]), U([[3.0, 4.0]])
    r = sinkhorn_solve(mu, nu, cost_matrix(mu, nu), EntropicConfig(eps))
    assert r.value == pytest.approx(5.0, abs=1e-12)
    assert r.converged


def test_large_eps_product_plan():
    mu, nu = random_pair(0)
    C = cost_matrix(mu, nu).entries
    r = sinkhorn_solve(mu, nu, C, EntropicConfig(1e4))
    assert r.value == pytest.approx(float(mu.weights @ C @ nu.weights), abs=1e-3)


def test_small_eps_near_exact():
    mu, nu = random_pair(1)
    C = cost_matrix(mu, nu)
    # the marginal tolerance is reached only very slowly at this eps, but the
    # value settles long before; accuracy of the value is what matters here
    r = sinkhorn_solve(mu, nu, C, EntropicConfig(0.01, max_iter=10_000))
    assert abs(r.value - exact_solve(mu, nu, C)[0]) < 0.05


def test_non_convergence_is_flagged():
    mu, nu = random_pair(2, n=20)
    r = sinkhorn_solve(mu, nu, cost_matrix(mu, nu), EntropicConfig(0.001, max_iter=3))
    assert not r.converged
    assert r.iterations == 3
    assert math.isfinite(r.value)


def test_c_eps_transform_single_source():
    C = np.array([[1.5, 4.0, 0.2]])
    for eps in (1e-3, 1.0, 50.0):
        np.testing.assert_allclose(c_eps_transform([0.7], C, eps, [1.0]), C[0] - 0.7, atol=1e-12)


def test_c_eps_transform_small_eps_limit():
    rng = np.random.default_rng(3)
    C, phi = rng.random((6, 4)) * 3, rng.standard_normal(6)
    np.testing.assert_allclose(c_eps_transform(phi, C, 1e-4, np.full(6, 1 / 6)), c_transform(phi, C), atol=1e-3)


def test_c_eps_transform_hand_value():
    got = c_eps_transform([0.0, 0.0], np.array([[1.0], [2.0]]), 1.0, [0.5, 0.5])
    assert got[0] == pytest.approx(-math.log((math.exp(-1) + math.exp(-2)) / 2))
    assert got[0] == pytest.approx(1.3799, abs=1e-4)


def test_c_eps_transform_no_overflow():
    got = c_eps_transform([0.0, 0.0], np.array([[1e4], [2e4]]), 1e-3, [0.5, 0.5])
    assert got[0] == pytest.approx(1e4 + 1e-3 * math.log(2))


def test_dual_value_at_zero():
    mu, nu = random_pair(4)
    C = cost_matrix(mu, nu).entries
    eps = 0.7
    expected = -eps * (mu.weights @ np.exp(-C / eps) @ nu.weights - 1)
    assert entropic_dual_value(np.zeros(5), np.zeros(5), C, eps, mu.weights, nu.weights) == pytest.approx(expected, abs=1e-14)


def test_dual_value_fixed_point_and_suboptimality():
    mu, nu = random_pair(5)
    C = cost_matrix(mu, nu).entries
    r = sinkhorn_solve(mu, nu, C, EntropicConfig(0.5))
    assert entropic_dual_value(r.phi, r.psi, C, 0.5, mu.weights, nu.weights) == pytest.approx(r.value, abs=1e-9)
    rng = np.random.default_rng(0)
    for _ in range(50):
        phi, psi = rng.standard_normal(5), rng.standard_normal(5)
        assert entropic_dual_value(phi, psi, C, 0.5, mu.weights, nu.weights) <= r.value + 1e-9


def test_self_step_examples():
    p, v = self_ot_symmetric_step(U([[1.0, 2.0]]), np.zeros((1, 1)), 1.0)
    assert p.tolist() == [0.0] and v == 0.0
    p, v = self_ot_symmetric_step(U([[0.0], [1.0]]), np.array([[0.0, 1.0], [1.0, 0.0]]), 1.0)
    expected = -math.log((1 + math.exp(-1)) / 2)
    np.testing.assert_allclose(p, [expected, expected], atol=1e-15)
    assert expected == pytest.approx(0.3799, abs=1e-4)
    _, v = self_ot_symmetric_step(U(np.ones((4, 2))), np.zeros((4, 4)), 0.3)
    assert v == 0.0


def test_self_step_is_lower_bound_of_self_ot():
    mu, _ = random_pair(6, n=8)
    C = cost_matrix(mu, mu)
    _, v = self_ot_symmetric_step(mu, C, 0.5)
    assert v <= sinkhorn_solve(mu, mu, C, EntropicConfig(0.5)).value + 1e-12


@pytest.mark.parametrize("eps", [0.01, 0.1, 1.0, 10.0])
def test_monotone_relaxation(eps):
    for seed in range(5):
        mu, nu = random_pair(seed)
        C = cost_matrix(mu, nu)
        r = sinkhorn_solve(mu, nu, C, EntropicConfig(eps, max_iter=10_000))
        assert r.value >= exact_solve(mu, nu, C)[0] - 1e-9


def test_divergence_identical_measures_exact_zero():
    mu, _ = random_pair(7, n=10)
    for eps in (0.01, 0.1, 1.0):
        assert sinkhorn_divergence(mu, mu, eps) == 0.0
        assert sinkhorn_divergence(mu, U(mu.points.copy()), eps, full_self_terms=True) == 0.0


def test_divergence_single_atoms():
    assert sinkhorn_divergence(U([[0.0, 0.0]]), U([[3.0, 4.0]]), 0.5) == pytest.approx(5.0, abs=1e-12)


def test_divergence_small_eps_near_w1():
    mu, nu = random_pair(8)
    cfg = EntropicConfig(0.01, max_iter=10_000)
    w1 = exact_solve(mu, nu, cost_matrix(mu, nu))[0]
    assert abs(sinkhorn_divergence(mu, nu, 0.01, full_self_terms=True, cfg=cfg) - w1) < 0.1


def test_divergence_negative_radicand_reported():
    # solver values are nonnegative for c >= 0; a discriminator cross term need not be
    with pytest.raises(ValueError, match="negative"):
        DivergenceTerms(-0.5, 0.1, 0.1, p=2).value
    mu, nu = random_pair(9)
    assert sinkhorn_divergence_terms(mu, nu, 50.0, p=2).cross >= 0


def test_config_validation():
    with pytest.raises(ValueError):
        EntropicConfig(0.0)
    with pytest.raises(ValueError):
        EntropicConfig(1.0, max_iter=0)


def test_symmetric_self_solver_matches_alternation():
    rng = np.random.default_rng(41)
    for eps in (1.0, 0.3):
        mu = DiscreteMeasure.uniform(rng.standard_normal((12, 2)))
        C = cost_matrix(mu, mu)
        sym = self_ot_solve(mu, C, EntropicConfig(eps))
        alt = sinkhorn_solve(mu, mu, C, EntropicConfig(eps, max_iter=50_000))
        assert sym.converged and sym.iterations < 200
        assert sym.value == pytest.approx(alt.value, abs=1e-8)

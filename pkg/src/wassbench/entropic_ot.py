"""Entropy-relaxed OT in the log domain, (c, eps)-transforms, Sinkhorn divergence."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exact_ot import CostMatrix, DiscreteMeasure, cost_matrix


@dataclass(frozen=True)
class EntropicConfig:
    eps: float
    max_iter: int = 1000
    tol: float = 1e-9

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class EntropicDualValue:
    value: float
    phi: np.ndarray
    psi: np.ndarray
    converged: bool
    iterations: int
    marginal_error: float


def _entries(C) -> np.ndarray:
    return C.entries if isinstance(C, CostMatrix) else np.asarray(C, dtype=np.float64)


def _logsumexp(z: np.ndarray, axis=None) -> np.ndarray:
    # scipy.special.logsumexp is correct but its dispatch overhead dominates
    # on the small matrices Sinkhorn sweeps thousands of times
    m = np.max(z, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(z - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())


def c_eps_transform(phi, C, eps: float, weights) -> np.ndarray:
    """psi_j = -eps * log sum_i w_i exp((phi_i - C_ij) / eps).

    ``C`` is indexed (source, target); the transform runs down its columns.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    M = _entries(C)
    w = np.asarray(weights, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    z = (np.asarray(phi, dtype=np.float64)[:, None] - M) / eps + logw[:, None]
    return -eps * _logsumexp(z, axis=0)


def c_transform(phi, C) -> np.ndarray:
    """Hard c-transform psi_j = min_i (C_ij - phi_i)."""
    M = _entries(C)
    return np.min(M - np.asarray(phi, dtype=np.float64)[:, None], axis=0)


def entropic_dual_value(phi, psi, C, eps: float, mu_weights, nu_weights) -> float:
    """<mu, phi> + <nu, psi> - eps * (sum_ij a_i b_j exp((phi_i + psi_j - C_ij)/eps) - 1)."""
    M = _entries(C)
    a = np.asarray(mu_weights, dtype=np.float64)
    b = np.asarray(nu_weights, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    with np.errstate(divide="ignore"):
        z = (phi[:, None] + psi[None, :] - M) / eps + np.log(a)[:, None] + np.log(b)[None, :]
    mass = float(np.exp(_logsumexp(z)))
    return float(phi @ a + psi @ b - eps * (mass - 1.0))


def _row_error(phi, phi_next, eps, a) -> float:
    # row sums of the plan (phi, psi) are a_i exp((phi_i - phi_next_i) / eps)
    # when phi_next is the transform of psi, so no plan is formed
    with np.errstate(over="ignore"):
        return float(np.abs(a * np.exp((phi - phi_next) / eps) - a).sum())


def sinkhorn_solve(mu: DiscreteMeasure, nu: DiscreteMeasure, C, cfg: EntropicConfig) -> EntropicDualValue:
    """Alternating (c, eps)-transforms until the implied plan's L1 marginal
    violation drops below ``cfg.tol``.  Non-convergence is flagged, not raised."""
    M = _entries(C)
    if M.shape != (mu.size, nu.size):
        raise ValueError(f"cost matrix {M.shape} does not match measures ({mu.size}, {nu.size})")
    a, b, eps = mu.weights, nu.weights, cfg.eps
    Mt = np.ascontiguousarray(M.T)
    psi = c_eps_transform(np.zeros(mu.size), M, eps, a)
    phi_next = c_eps_transform(psi, Mt, eps, b)
    err = np.inf
    it = 0
    for it in range(1, cfg.max_iter + 1):
        phi = phi_next
        psi = c_eps_transform(phi, M, eps, a)
        phi_next = c_eps_transform(psi, Mt, eps, b)
        # after the psi update the column marginal is exact; check rows
        err = _row_error(phi, phi_next, eps, a)
        if err < cfg.tol:
            break
    value = entropic_dual_value(phi, psi, M, eps, a, b)
    return EntropicDualValue(value, phi, psi, bool(err < cfg.tol), it, err)


def self_ot_solve(mu: DiscreteMeasure, C_mumu, cfg: EntropicConfig) -> EntropicDualValue:
    """OT^eps(mu, mu) by the averaged symmetric update p <- (p + p^{(c,eps)}) / 2.

    Plain alternation oscillates on symmetric problems; the averaged map
    reaches the same fixed point in a few dozen sweeps.
    """
    M = _entries(C_mumu)
    a, eps = mu.weights, cfg.eps
    p = np.zeros(mu.size)
    t = c_eps_transform(p, M, eps, a)
    err = np.inf
    it = 0
    for it in range(1, cfg.max_iter + 1):
        p = 0.5 * (p + t)
        t = c_eps_transform(p, M, eps, a)
        # M is symmetric, so t is the transform in both directions
        err = 2.0 * _row_error(p, t, eps, a)
        if err < cfg.tol:
            break
    value = entropic_dual_value(p, p, M, eps, a, a)
    return EntropicDualValue(value, p, p, bool(err < cfg.tol), it, err)


def self_ot_symmetric_step(mu: DiscreteMeasure, C_mumu, eps: float) -> tuple[np.ndarray, float]:
    """One symmetric Sinkhorn update from a zero potential.

    Returns the updated potential ``p = 0^{(c,eps)}`` and the debiasing term
    value ``<mu, 0> + <mu, p>``, i.e. the semi-dual objective at zero, which
    is a lower bound of OT^eps(mu, mu).
    """
    M = _entries(C_mumu)
    p = c_eps_transform(np.zeros(mu.size), M, eps, mu.weights)
    return p, float(p @ mu.weights)


def self_ot_value(mu: DiscreteMeasure, C_mumu, eps: float, full: bool = False, cfg: EntropicConfig | None = None) -> float:
    if full:
        return self_ot_solve(mu, C_mumu, cfg or EntropicConfig(eps)).value
    return self_ot_symmetric_step(mu, C_mumu, eps)[1]


@dataclass(frozen=True)
class DivergenceTerms:
    cross: float
    self_mu: float
    self_nu: float
    p: float = 1.0

    @property
    def value(self) -> float:
        return _root(self.cross, self.p) - 0.5 * (_root(self.self_mu, self.p) + _root(self.self_nu, self.p))


def _root(v: float, p: float) -> float:
    if p == 1:
        return v
    if v < 0:
        raise ValueError(f"negative entropic value {v!r} under a 1/{p} power")
    return v ** (1.0 / p)


def sinkhorn_divergence_terms(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    eps: float,
    p: float = 1.0,
    full_self_terms: bool = False,
    cfg: EntropicConfig | None = None,
) -> DivergenceTerms:
    cfg = cfg or EntropicConfig(eps)
    if _same_measure(mu, nu):
        # the cross problem is the self problem: one routine for all three
        # terms so they cancel exactly
        t = self_ot_value(mu, cost_matrix(mu, mu, p), eps, full_self_terms, cfg)
        return DivergenceTerms(t, t, t, p)
    cross = sinkhorn_solve(mu, nu, cost_matrix(mu, nu, p), cfg).value
    s_mu = self_ot_value(mu, cost_matrix(mu, mu, p), eps, full_self_terms, cfg)
    s_nu = self_ot_value(nu, cost_matrix(nu, nu, p), eps, full_self_terms, cfg)
    return DivergenceTerms(cross, s_mu, s_nu, p)


def sinkhorn_divergence(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    eps: float,
    p: float = 1.0,
    full_self_terms: bool = False,
    cfg: EntropicConfig | None = None,
) -> float:
    """S(mu, nu) = OT^eps(mu,nu)^(1/p) - (OT^eps(mu,mu)^(1/p) + OT^eps(nu,nu)^(1/p)) / 2.

    Self terms use the one-step shortcut unless ``full_self_terms`` is set.
    """
    return sinkhorn_divergence_terms(mu, nu, eps, p, full_self_terms, cfg).value


def _same_measure(mu: DiscreteMeasure, nu: DiscreteMeasure) -> bool:
    return mu is nu or (
        mu.points.shape == nu.points.shape
        and np.array_equal(mu.points, nu.points)
        and np.array_equal(mu.weights, nu.weights)
    )

"""The four minibatch dual estimators of W1 and the discriminator training loop.

Every objective is written to be MAXIMIZED over the discriminator weights:

* ``WC``   mean phi(X) - mean phi(Y), weights clipped to [-xi, xi] after each step
* ``GP``   the same gap minus ``lam * mean (1 - |grad phi(z)|)^2`` at random interpolates
* ``CT``   mean phi(X) + mean phi^c(Y), with the c-transform taken over the minibatch
* ``CEPS`` mean phi(X) + mean phi^(c,eps)(Y), the soft-min analogue

For WC and GP the reported estimate is the raw gap; the penalty only shapes
training.  For CEPS the estimate recorded during training is the Sinkhorn
divergence, whose self terms come from one symmetric Sinkhorn step.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from . import nn
from .entropic_ot import (
    DivergenceTerms,
    EntropicConfig,
    self_ot_value,
    sinkhorn_divergence_terms,
)
from .exact_ot import DiscreteMeasure, cost_matrix, exact_solve
from .tensor import NonFiniteError, Tensor, as_tensor, grad, logsumexp, norm, no_grad

METHODS = ("WC", "GP", "CT", "CEPS")

# learning rates and optimizers used for the approximation experiments
DEFAULT_OPTIMIZERS = {
    "WC": ("rmsprop", 5e-5),
    "GP": ("adam", 1e-4),
    "CT": ("rmsprop", 1e-4),
    "CEPS": ("rmsprop", 1e-4),
}


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, reason: str):
        super().__init__(f"non-finite objective at iteration {iteration}: {reason}")
        self.iteration = iteration


@dataclass
class EstimatorConfig:
    method: str
    xi: float | None = None
    lam: float | None = None
    eps: float | None = None
    optimizer: str | None = None
    lr: float | None = None
    betas: tuple[float, float] = (0.0, 0.9)
    rms_alpha: float = 0.99
    opt_eps: float = 1e-8
    batch_size: int = 64
    iterations: int = 500
    hidden: tuple[int, ...] = (128, 128)
    clip_biases: bool = True
    full_self_terms: bool = False
    seed: int = 0

    def __post_init__(self):
        self.method = self.method.upper()
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method == "WC":
            self.xi = 0.01 if self.xi is None else self.xi
            if self.xi <= 0:
                raise ValueError("xi must be positive")
        elif self.xi is not None:
            raise ValueError("xi only applies to WC")
        if self.method == "GP":
            self.lam = 10.0 if self.lam is None else self.lam
        elif self.lam is not None:
            raise ValueError("lam only applies to GP")
        if self.method == "CEPS":
            if self.eps is None or self.eps <= 0:
                raise ValueError("CEPS needs a positive eps")
        elif self.eps is not None:
            raise ValueError("eps only applies to CEPS")
        opt, lr = DEFAULT_OPTIMIZERS[self.method]
        self.optimizer = (self.optimizer or opt).lower()
        self.lr = lr if self.lr is None else self.lr
        self.hidden = tuple(self.hidden)
        self.betas = tuple(self.betas)
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")

    @property
    def label(self) -> str:
        if self.method == "CEPS":
            return f"CEPS(eps={self.eps:g})"
        return self.method

    def make_optimizer(self) -> nn.OptimizerState:
        return nn.make_optimizer(
            self.optimizer, self.lr, betas=self.betas, alpha=self.rms_alpha, eps=self.opt_eps
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["betas"] = list(self.betas)
        return {k: v for k, v in d.items() if v is not None}


@dataclass
class EstimateRecord:
    """One estimate against its ground truth.

    ``error`` is ``max(0, ground_truth - estimate)`` except for CEPS, where it
    is the sum of that quantity over the cross and the two self terms.
    """

    iteration: int
    method: str
    estimate: float
    ground_truth: float | None = None
    error: float | None = None
    wall_ms: float = 0.0
    terms: dict | None = field(default=None, repr=False)


def error_metric(d_est: float, d_ground: float) -> float:
    return max(0.0, d_ground - d_est)


def divergence_error(est: DivergenceTerms, truth: DivergenceTerms) -> float:
    return (
        error_metric(est.cross, truth.cross)
        + error_metric(est.self_mu, truth.self_mu)
        + error_metric(est.self_nu, truth.self_nu)
    )


# -- objectives --------------------------------------------------------------
def _phi(net: nn.MLP, X, params) -> Tensor:
    return nn.forward(net, X, params)


def _check_pair(X, Y) -> None:
    xs, ys = np.shape(X.data if isinstance(X, Tensor) else X), np.shape(Y.data if isinstance(Y, Tensor) else Y)
    if len(xs) != 2 or len(ys) != 2 or xs[1] != ys[1]:
        raise ValueError(f"batch shapes {xs} and {ys} are incompatible")


def dual_gap_objective(net: nn.MLP, X, Y, params=None) -> Tensor:
    _check_pair(X, Y)
    return _phi(net, X, params).mean() - _phi(net, Y, params).mean()


def interpolates(X: np.ndarray, Y: np.ndarray, t: np.ndarray) -> np.ndarray:
    """z_i = t_i x_i + (1 - t_i) y_i."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    return t * X + (1.0 - t) * Y


def gradient_penalty_term(net: nn.MLP, X, Y, t, params=None) -> Tensor:
    """Mean of (1 - |grad_z phi(z_i)|)^2 over one interpolate per pair.

    Rows of a batch do not interact, so the gradient of ``sum_i phi(z_i)``
    with respect to Z holds every per-point gradient at once.
    """
    _check_pair(X, Y)
    if len(X) != len(Y):
        raise ValueError("gradient penalty pairs points, batch sizes must match")
    Z = Tensor(interpolates(np.asarray(X), np.asarray(Y), t), requires_grad=True)
    (gz,) = grad(_phi(net, Z, params).sum(), [Z], create_graph=True)
    return (1.0 - norm(gz, axis=1)).square().mean()


def c_transform_minibatch(phi_x, C) -> Tensor:
    """psi_i = min_j (C[j, i] - phi_j) with ``C[j, i] = c(x_j, y_i)``.

    The argmin is held fixed when differentiating (lowest index on ties).
    """
    phi_x, C = as_tensor(phi_x), as_tensor(C.entries if hasattr(C, "entries") else C)
    return (C - phi_x.reshape(-1, 1)).min(axis=0)


def c_eps_transform_minibatch(phi_x, C, eps: float) -> Tensor:
    """psi_i = -eps log( (1/N) sum_j exp((phi_j - C[j, i]) / eps) )."""
    phi_x, C = as_tensor(phi_x), as_tensor(C.entries if hasattr(C, "entries") else C)
    n = C.shape[0]
    return -eps * (logsumexp((phi_x.reshape(-1, 1) - C) * (1.0 / eps), axis=0) - math.log(n))


def _cost(X, Y, C):
    if C is not None:
        return C
    return cost_matrix(np.asarray(X), np.asarray(Y), 1).entries


def objective_ct(net: nn.MLP, X, Y, params=None, C=None) -> Tensor:
    _check_pair(X, Y)
    phi_x = _phi(net, X, params)
    return phi_x.mean() + c_transform_minibatch(phi_x, _cost(X, Y, C)).mean()


def objective_ceps(net: nn.MLP, X, Y, eps: float, params=None, C=None) -> Tensor:
    if eps <= 0:
        raise ValueError("eps must be positive")
    _check_pair(X, Y)
    phi_x = _phi(net, X, params)
    return phi_x.mean() + c_eps_transform_minibatch(phi_x, _cost(X, Y, C), eps).mean()


def method_objective(cfg: EstimatorConfig, net: nn.MLP, X, Y, params=None, rng=None, C=None) -> tuple[Tensor, Tensor]:
    """(training objective, estimate) for one minibatch pair."""
    if cfg.method in ("WC", "GP"):
        gap = dual_gap_objective(net, X, Y, params)
        if cfg.method == "WC":
            return gap, gap
        t = rng.uniform(size=len(X))
        return gap - cfg.lam * gradient_penalty_term(net, X, Y, t, params), gap
    if cfg.method == "CT":
        obj = objective_ct(net, X, Y, params, C)
    else:
        obj = objective_ceps(net, X, Y, cfg.eps, params, C)
    return obj, obj


def estimate_distance(method: str, net: nn.MLP, X, Y, eps: float | None = None, C=None) -> float:
    """Value of the method's dual objective on ``(X, Y)``; no parameter update.

    WC and GP report the raw gap (no penalty).
    """
    method = method.upper()
    with no_grad():
        if method in ("WC", "GP"):
            return float(dual_gap_objective(net, X, Y).data)
        if method == "CT":
            return float(objective_ct(net, X, Y, C=C).data)
        if method == "CEPS":
            return float(objective_ceps(net, X, Y, eps, C=C).data)
    raise ValueError(f"unknown method {method!r}")


def estimate_divergence_terms(net: nn.MLP, X, Y, eps: float, full_self_terms: bool = False, C=None) -> DivergenceTerms:
    """CEPS estimate of all three Sinkhorn-divergence terms: the cross term
    from the discriminator, self terms from one symmetric step (or a
    converged solve if requested)."""
    cross = estimate_distance("CEPS", net, X, Y, eps=eps, C=C)
    mx, my = DiscreteMeasure.uniform(np.asarray(X)), DiscreteMeasure.uniform(np.asarray(Y))
    sx = self_ot_value(mx, cost_matrix(mx, mx, 1), eps, full=full_self_terms)
    sy = self_ot_value(my, cost_matrix(my, my, 1), eps, full=full_self_terms)
    return DivergenceTerms(cross, sx, sy)


# -- ground truth ------------------------------------------------------------
def exact_ground_truth(X, Y) -> float:
    mx, my = DiscreteMeasure.uniform(np.asarray(X)), DiscreteMeasure.uniform(np.asarray(Y))
    return exact_solve(mx, my, cost_matrix(mx, my, 1))[0]


def sinkhorn_ground_truth(X, Y, eps: float, cfg: EntropicConfig | None = None) -> DivergenceTerms:
    """Three converged entropic terms, the oracle for CEPS."""
    mx, my = DiscreteMeasure.uniform(np.asarray(X)), DiscreteMeasure.uniform(np.asarray(Y))
    return sinkhorn_divergence_terms(mx, my, eps, 1.0, full_self_terms=True, cfg=cfg or EntropicConfig(eps))


def make_record(cfg: EstimatorConfig, net: nn.MLP, X, Y, iteration: int, truth=None, wall_ms: float = 0.0, C=None) -> EstimateRecord:
    """Score the current net on a pair against an optional precomputed truth.

    ``truth`` is a float (exact W1) for WC/GP/CT and :class:`DivergenceTerms`
    for CEPS.
    """
    if cfg.method == "CEPS":
        est = estimate_divergence_terms(net, X, Y, cfg.eps, cfg.full_self_terms, C=C)
        rec = EstimateRecord(iteration, cfg.label, est.value, wall_ms=wall_ms)
        rec.terms = {"estimate": asdict(est)}
        if truth is not None:
            rec.ground_truth = truth.value
            rec.error = divergence_error(est, truth)
            rec.terms["ground_truth"] = asdict(truth)
        return rec
    est = estimate_distance(cfg.method, net, X, Y, C=C)
    rec = EstimateRecord(iteration, cfg.label, est, wall_ms=wall_ms)
    if truth is not None:
        rec.ground_truth = float(truth)
        rec.error = error_metric(est, float(truth))
    return rec


def ground_truth_for(cfg: EstimatorConfig, X, Y, entropic: EntropicConfig | None = None):
    if cfg.method == "CEPS":
        return sinkhorn_ground_truth(X, Y, cfg.eps, entropic)
    return exact_ground_truth(X, Y)


# -- training ----------------------------------------------------------------
class Trainer:
    """Owns one discriminator and its optimizer state."""

    def __init__(self, cfg: EstimatorConfig, input_dim: int, net: nn.MLP | None = None):
        self.cfg = cfg
        self.net = net if net is not None else nn.discriminator(input_dim, cfg.seed, cfg.hidden)
        self.opt = cfg.make_optimizer()
        self.rng = np.random.default_rng([cfg.seed, 1])
        if cfg.method == "WC":
            nn.clip_weights(self.net, cfg.xi, cfg.clip_biases)

    def step(self, X, Y, iteration: int = 0, C=None) -> float:
        """One ascent step on the pair; returns the pre-step estimate."""
        params = nn.leaf_params(self.net)
        try:
            obj, est = method_objective(self.cfg, self.net, X, Y, params, self.rng, C)
            names = list(params)
            grads = grad(obj, [params[k] for k in names])
        except NonFiniteError as exc:
            raise TrainingDiverged(iteration, str(exc)) from exc
        nn.optimizer_step(self.net.params, {k: g.data for k, g in zip(names, grads)}, self.opt)
        if self.cfg.method == "WC":
            nn.clip_weights(self.net, self.cfg.xi, self.cfg.clip_biases)
        if not all(np.all(np.isfinite(p)) for p in self.net.params.values()):
            raise TrainingDiverged(iteration, "parameters became non-finite")
        return float(est.data)


def train_discriminator(
    cfg: EstimatorConfig,
    batches: Iterable[tuple[np.ndarray, np.ndarray]],
    ground_truth: bool | Callable | None = None,
    net: nn.MLP | None = None,
    input_dim: int | None = None,
) -> tuple[nn.MLP, list[EstimateRecord]]:
    """Run ``cfg.iterations`` ascent steps over ``batches``.

    ``ground_truth`` may be falsy (no oracle), True (the method's default
    oracle) or a callable ``(X, Y) -> truth``.  Each record holds the
    objective value seen by that step, i.e. before the update.
    """
    if ground_truth is True:
        oracle = lambda a, b: ground_truth_for(cfg, a, b)  # noqa: E731
    else:
        oracle = ground_truth or None
    records: list[EstimateRecord] = []
    trainer = Trainer(cfg, net.input_dim, net) if net is not None else None
    it: Iterator = iter(batches)
    for k in range(cfg.iterations):
        X, Y = next(it)
        if trainer is None:
            trainer = Trainer(cfg, X.shape[1])
        t0 = time.perf_counter()
        value = trainer.step(X, Y, k)
        wall = (time.perf_counter() - t0) * 1e3
        truth = oracle(X, Y) if oracle else None
        if cfg.method == "CEPS":
            est = _with_self_terms(value, X, Y, cfg)
            rec = EstimateRecord(k, cfg.label, est.value, wall_ms=wall, terms={"estimate": asdict(est)})
            if truth is not None:
                rec.ground_truth = truth.value
                rec.error = divergence_error(est, truth)
                rec.terms["ground_truth"] = asdict(truth)
        else:
            rec = EstimateRecord(k, cfg.label, value, wall_ms=wall)
            if truth is not None:
                rec.ground_truth = float(truth)
                rec.error = error_metric(value, float(truth))
        records.append(rec)
    if trainer is None:
        if net is None:
            if input_dim is None:
                raise ValueError("input_dim is required when no batches are consumed")
            trainer = Trainer(cfg, input_dim)
        else:
            return net, records
    return trainer.net, records


def _with_self_terms(cross: float, X, Y, cfg: EstimatorConfig) -> DivergenceTerms:
    mx, my = DiscreteMeasure.uniform(np.asarray(X)), DiscreteMeasure.uniform(np.asarray(Y))
    sx = self_ot_value(mx, cost_matrix(mx, mx, 1), cfg.eps, full=cfg.full_self_terms)
    sy = self_ot_value(my, cost_matrix(my, my, 1), cfg.eps, full=cfg.full_self_terms)
    return DivergenceTerms(cross, sx, sy)

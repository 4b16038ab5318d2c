"""Experiment runners: approximation, stability, toy WGAN trace, oracle check."""
from __future__ import annotations

import dataclasses
import math
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .. import data as D
from .. import nn
from ..entropic_ot import EntropicConfig, sinkhorn_solve
from ..estimators import (
    EstimateRecord,
    EstimatorConfig,
    Trainer,
    TrainingDiverged,
    divergence_error,
    error_metric,
    estimate_distance,
    estimate_divergence_terms,
    exact_ground_truth,
    objective_ceps,
    objective_ct,
    sinkhorn_ground_truth,
    train_discriminator,
)
from ..exact_ot import DiscreteMeasure, brute_force_solve, cost_matrix, exact_solve
from ..tensor import Tensor, grad, pairwise_distance
from .config import ConfigError, ExperimentConfig
from .report import ExperimentReport, error_aggregates, mean_sd

# stable integer tags for seed derivation
_TAGS = {"split": 1, "train": 2, "eval": 3, "net": 4, "subset": 5, "gen": 6, "latent": 7, "real": 8, "oracle": 9}


def derive_seed(seed: int, *keys) -> int:
    ints = [int(seed)] + [(_TAGS[k] if isinstance(k, str) else int(k)) for k in keys]
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


def load_dataset(ds: dict, seed: int) -> D.Dataset:
    kind = ds.get("kind", "mnist")
    if kind == "mnist":
        return D.load_mnist(ds.get("path"), ds.get("normalization", "unit"), ds.get("limit"))
    if kind == "gaussian-mixture":
        return D.gaussian_mixture(int(ds.get("n", 5000)), int(ds.get("d", 3072)), derive_seed(seed, "subset"))
    if kind == "csv":
        return D.load_csv(ds["path"])
    raise ConfigError(f"dataset kind {kind!r} cannot be split into two measures")


def measures_for(cfg: ExperimentConfig) -> tuple[D.Dataset, D.Dataset]:
    ds = cfg.dataset
    kind = ds.get("kind", "mnist")
    if kind == "gaussian-shift":
        shift = ds.get("shift", [1.0, 1.0])
        d = int(ds.get("d", len(shift) if isinstance(shift, list) else 2))
        return D.gaussian_shift_pair(int(ds.get("n", 10000)), d, shift, derive_seed(cfg.seed, "split"),
                                     paired=bool(ds.get("paired", False)))
    if kind == "csv-pair":
        return D.load_csv(ds["mu"]), D.load_csv(ds["nu"])
    if kind == "identical":
        base = load_dataset(ds.get("base", {"kind": "mnist"}), cfg.seed)
        return base, base
    return D.split_halves(load_dataset(ds, cfg.seed), derive_seed(cfg.seed, "split"))


def _batches(cfg: ExperimentConfig, mu: D.Dataset, nu: D.Dataset, size: int, seed: int):
    return D.paired_batches(mu, nu, size, seed, paired=bool(cfg.dataset.get("paired", False)))


def _entropic(cfg: ExperimentConfig, eps: float) -> EntropicConfig:
    return EntropicConfig(eps, cfg.sinkhorn_max_iter, cfg.sinkhorn_tol)


def _run_tasks(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, *zip(*tasks)))


# -- approximation -----------------------------------------------------------
def _approximation_repeat(cfg: ExperimentConfig, mu: D.Dataset, nu: D.Dataset, r: int):
    ests = cfg.estimators()
    eval_pairs = _batches(cfg, mu, nu, cfg.batch_size, derive_seed(cfg.seed, r, "eval"))
    pairs = [next(eval_pairs) for _ in range(cfg.eval_batches)]
    exact = [exact_ground_truth(X, Y) for X, Y in pairs]
    entropic: dict[float, list] = {}
    for e in ests:
        if e.method == "CEPS" and e.eps not in entropic:
            entropic[e.eps] = [sinkhorn_ground_truth(X, Y, e.eps, _entropic(cfg, e.eps)) for X, Y in pairs]
    out = []
    for e in ests:
        e = dataclasses.replace(e, seed=derive_seed(cfg.seed, r, "net"))
        batches = _batches(cfg, mu, nu, e.batch_size, derive_seed(cfg.seed, r, "train"))
        net, train_recs = train_discriminator(e, batches, ground_truth=False)
        before = net.checksum()
        eval_recs = []
        for l, (X, Y) in enumerate(pairs):
            t0 = time.perf_counter()
            if e.method == "CEPS":
                truth = entropic[e.eps][l]
                est = estimate_divergence_terms(net, X, Y, e.eps, e.full_self_terms)
                rec = EstimateRecord(l, e.label, est.value, truth.value, divergence_error(est, truth))
            else:
                est = estimate_distance(e.method, net, X, Y)
                rec = EstimateRecord(l, e.label, est, exact[l], error_metric(est, exact[l]))
            rec.wall_ms = (time.perf_counter() - t0) * 1e3
            eval_recs.append(rec)
        out.append((e.label, train_recs, eval_recs, before, net.checksum()))
    return out


def run_approximation(cfg: ExperimentConfig) -> ExperimentReport:
    """Train each method on minibatches, freeze, and score fresh minibatch pairs."""
    t0 = time.perf_counter()
    mu, nu = measures_for(cfg)
    if min(len(mu), len(nu)) < cfg.batch_size:
        raise ConfigError(f"measures of size {len(mu)}/{len(nu)} are too small for batches of {cfg.batch_size}")
    report = ExperimentReport("approximation", cfg.to_dict())
    results = _run_tasks(_approximation_repeat, [(cfg, mu, nu, r) for r in range(cfg.repeats)], cfg.jobs)
    frozen = {}
    for r, per_method in enumerate(results):
        for label, train_recs, eval_recs, before, after in per_method:
            for rec in train_recs:
                report.add(rec, r, "train", cfg.record_timing)
            for rec in eval_recs:
                report.add(rec, r, "eval", cfg.record_timing)
            frozen[f"{label}/repeat{r}"] = before == after
    report.aggregates = {"eval_error": error_aggregates(report.records, "eval")}
    report.extras = {
        "frozen_during_eval": frozen,
        "measure_sizes": [len(mu), len(nu)],
        "normalization": mu.normalization,
        "optimizers": {e.label: e.make_optimizer().describe() for e in cfg.estimators()},
    }
    report.wall_seconds = time.perf_counter() - t0
    return report


# -- stability ---------------------------------------------------------------
def _eval_pairs(mu: D.Dataset, nu: D.Dataset, m: int, seed: int):
    """Disjoint size-m batch pairs covering one epoch of each measure."""
    if m >= len(mu):
        return [(mu.points, nu.points)]
    sx = D.BatchStream(mu, m, derive_seed(seed, 0), reshuffle=False)
    sy = D.BatchStream(nu, m, derive_seed(seed, 1), reshuffle=False)
    return [(sx.next_points(), sy.next_points()) for _ in range(len(mu) // m)]


def stability_train(cfg: ExperimentConfig, mu: D.Dataset, nu: D.Dataset, e: EstimatorConfig, idx: int, n_train: int):
    """Train method number ``idx`` with batches of ``n_train``; deterministic in the config seed."""
    e2 = dataclasses.replace(e, batch_size=n_train, seed=derive_seed(cfg.seed, idx, "net"))
    batches = _batches(cfg, mu, nu, n_train, derive_seed(cfg.seed, idx, n_train, "train"))
    return train_discriminator(e2, batches, ground_truth=False)


def stability_subsets(cfg: ExperimentConfig) -> tuple[D.Dataset, D.Dataset]:
    mu, nu = measures_for(cfg)
    if min(len(mu), len(nu)) < cfg.subset_size:
        raise ConfigError(f"measures too small for subsets of {cfg.subset_size}")
    mu = D.random_subset(mu, cfg.subset_size, derive_seed(cfg.seed, 0, "subset"))
    nu = D.random_subset(nu, cfg.subset_size, derive_seed(cfg.seed, 1, "subset"))
    return mu, nu


def _stability_method(cfg: ExperimentConfig, mu: D.Dataset, nu: D.Dataset, e: EstimatorConfig, idx: int):
    rows = []
    table = {}
    for n_train in cfg.train_sizes:
        net, train_recs = stability_train(cfg, mu, nu, e, idx, int(n_train))
        rows += [(r, f"train:N={n_train}") for r in train_recs]
        for m in cfg.eval_sizes:
            vals = []
            for l, (X, Y) in enumerate(_eval_pairs(mu, nu, int(m), derive_seed(cfg.seed, m, "eval"))):
                t0 = time.perf_counter()
                v = estimate_distance(e.method, net, X, Y, eps=e.eps)
                vals.append(v)
                rows.append((EstimateRecord(l, e.label, v, wall_ms=(time.perf_counter() - t0) * 1e3),
                             f"eval:N={n_train},M={m}"))
            table[f"N={n_train},M={m}"] = mean_sd(vals)
    return e.label, rows, table


def run_stability(cfg: ExperimentConfig) -> ExperimentReport:
    """Train with each N, evaluate the frozen objective with each M."""
    t0 = time.perf_counter()
    mu, nu = stability_subsets(cfg)
    if max(cfg.train_sizes + cfg.eval_sizes) > cfg.subset_size:
        raise ConfigError("batch sizes cannot exceed the subset size")
    ests = cfg.estimators()
    report = ExperimentReport("stability", cfg.to_dict())
    results = _run_tasks(_stability_method, [(cfg, mu, nu, e, i) for i, e in enumerate(ests)], cfg.jobs)
    table = {}
    for label, rows, tab in results:
        for rec, phase in rows:
            report.add(rec, 0, phase, cfg.record_timing)
        table[label] = tab
    mm, nm = mu.as_measure(), nu.as_measure()
    C = cost_matrix(mm, nm, 1)
    truth = {"exact_W1": exact_solve(mm, nm, C)[0]}
    for e in ests:
        if e.method == "CEPS":
            truth[f"entropic(eps={e.eps:g})"] = sinkhorn_solve(mm, nm, C, _entropic(cfg, e.eps)).value
    report.aggregates = {"estimates": table, "ground_truth": truth}
    report.extras = {"subset_size": cfg.subset_size, "normalization": mu.normalization}
    report.wall_seconds = time.perf_counter() - t0
    return report


# -- toy WGAN ----------------------------------------------------------------
def _generator_loss(e: EstimatorConfig, disc: nn.MLP, fake: Tensor, real: np.ndarray) -> Tensor:
    """Quantity the generator MINIMIZES.

    WC/GP: -mean phi(g(z)) (the real-sample term does not depend on the
    generator).  CT/CEPS: the transform objective with phi on the fake side,
    differentiated through the cost matrix.
    """
    if e.method in ("WC", "GP"):
        return -nn.forward(disc, fake).mean()
    C = pairwise_distance(fake, Tensor(real))
    if e.method == "CT":
        return objective_ct(disc, fake, real, C=C)
    return objective_ceps(disc, fake, real, e.eps, C=C)


def _sides(e: EstimatorConfig, real, fake):
    # phi is evaluated on the fake samples for the transform methods
    return (fake, real) if e.method in ("CT", "CEPS") else (real, fake)


def _trace_record(cfg: ExperimentConfig, e: EstimatorConfig, disc, real, fake, k: int) -> EstimateRecord:
    X, Y = _sides(e, real, fake)
    t0 = time.perf_counter()
    exact = exact_ground_truth(real, fake)
    if e.method == "CEPS":
        truth = sinkhorn_ground_truth(X, Y, e.eps, _entropic(cfg, e.eps))
        est = estimate_divergence_terms(disc, X, Y, e.eps, e.full_self_terms)
        rec = EstimateRecord(k, e.label, est.value, truth.value, divergence_error(est, truth))
        rec.terms = {"exact_W1": exact}
    else:
        est = estimate_distance(e.method, disc, X, Y)
        rec = EstimateRecord(k, e.label, est, exact, error_metric(est, exact))
    rec.wall_ms = (time.perf_counter() - t0) * 1e3
    return rec


def _toy_method(cfg: ExperimentConfig, e: EstimatorConfig, idx: int):
    target = D.RingMixture(int(cfg.dataset.get("modes", 8)), float(cfg.dataset.get("radius", 2.0)),
                           float(cfg.dataset.get("std", 0.1)))
    d = 2
    rng = np.random.default_rng(derive_seed(cfg.seed, idx, "real"))
    e = dataclasses.replace(e, seed=derive_seed(cfg.seed, idx, "net"))
    gen = nn.generator(cfg.latent_dim, d, derive_seed(cfg.seed, idx, "gen"), e.hidden)
    gen_opt = nn.make_optimizer(cfg.generator_optimizer or e.optimizer, cfg.generator_lr or e.lr,
                                betas=e.betas, alpha=e.rms_alpha, eps=e.opt_eps)
    trainer = Trainer(e, d)
    n = e.batch_size

    def draw(size):
        real = target.sample(size, rng)
        z = rng.standard_normal((size, cfg.latent_dim))
        return real, z

    def fake_of(z):
        return nn.forward(gen, z).data

    rows = []
    snaps = []

    def snapshot(k):
        real, z = draw(cfg.snapshot_size)
        rec = _trace_record(cfg, e, trainer.net, real, fake_of(z), k)
        snaps.append(rec)

    real, z = draw(n)
    rows.append(_trace_record(cfg, e, trainer.net, real, fake_of(z), 0))
    if cfg.snapshot_every and cfg.generator_iterations:
        snapshot(0)
    for k in range(1, cfg.generator_iterations + 1):
        for _ in range(cfg.disc_iterations):
            r_, z_ = draw(n)
            X, Y = _sides(e, r_, fake_of(z_))
            trainer.step(X, Y, k)
        real, z = draw(n)
        fake = fake_of(z)
        rows.append(_trace_record(cfg, e, trainer.net, real, fake, k))
        gparams = nn.leaf_params(gen)
        names = list(gparams)
        loss = _generator_loss(e, trainer.net, nn.forward(gen, z, gparams), real)
        if not math.isfinite(float(loss.data)):
            raise TrainingDiverged(k, "generator loss")
        grads = grad(loss, [gparams[m] for m in names])
        nn.optimizer_step(gen.params, {m: -g.data for m, g in zip(names, grads)}, gen_opt)
        if cfg.snapshot_every and k % cfg.snapshot_every == 0:
            snapshot(k)
    return e.label, rows, snaps


def run_toy_wgan(cfg: ExperimentConfig) -> ExperimentReport:
    """Alternate discriminator and generator steps on a 2-D ring mixture,
    scoring the discriminator's distance estimate at every generator step."""
    t0 = time.perf_counter()
    ests = cfg.estimators()
    report = ExperimentReport("toy-wgan", cfg.to_dict())
    results = _run_tasks(_toy_method, [(cfg, e, i) for i, e in enumerate(ests)], cfg.jobs)
    agg = {}
    tail = 500
    for label, rows, snaps in results:
        for rec in rows:
            report.add(rec, 0, "trace", cfg.record_timing)
        for rec in snaps:
            report.add(rec, 0, "snapshot", cfg.record_timing)
        last = rows[1:][-tail:] if len(rows) > 1 else rows
        agg[label] = {
            "mean_abs_deviation_tail": mean_sd([abs(r.estimate - r.ground_truth) for r in last]),
            "tail_length": len(last),
            "final_ground_truth": rows[-1].ground_truth,
        }
    report.aggregates = {"trace": agg}
    report.wall_seconds = time.perf_counter() - t0
    return report


# -- oracle check ------------------------------------------------------------
def run_oracle_check(cfg: ExperimentConfig) -> ExperimentReport:
    """Exact solver against the permutation oracle on random uniform instances."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(derive_seed(cfg.seed, "oracle"))
    report = ExperimentReport("oracle-check", cfg.to_dict())
    worst_gap = 0.0
    worst_dual = -math.inf
    for i in range(cfg.instances):
        n = int(rng.integers(1, cfg.max_points + 1))
        d = int(rng.choice(cfg.dims))
        mu = DiscreteMeasure.uniform(rng.standard_normal((n, d)))
        nu = DiscreteMeasure.uniform(rng.standard_normal((n, d)))
        C = cost_matrix(mu, nu, 1)
        t1 = time.perf_counter()
        value, plan, duals = exact_solve(mu, nu, C)
        brute = brute_force_solve(mu, nu, C)
        gap = abs(value - brute)
        worst_gap = max(worst_gap, gap)
        worst_dual = max(worst_dual, float(np.max(duals.phi[:, None] + duals.psi[None, :] - C.entries)))
        rec = EstimateRecord(i, "exact-vs-brute", value, brute, gap, (time.perf_counter() - t1) * 1e3)
        report.add(rec, 0, "oracle", cfg.record_timing)
    report.aggregates = {
        "max_abs_gap": worst_gap,
        "max_dual_violation": worst_dual,
        "passed": bool(worst_gap < 1e-9 and worst_dual <= 1e-9),
    }
    report.wall_seconds = time.perf_counter() - t0
    return report


RUNNERS = {
    "approximation": run_approximation,
    "stability": run_stability,
    "toy-wgan": run_toy_wgan,
    "oracle-check": run_oracle_check,
}


def run(cfg: ExperimentConfig) -> ExperimentReport:
    return RUNNERS[cfg.experiment](cfg)

"""Exact discrete optimal transport (ground truth) and a permutation oracle."""
from __future__ import annotations

import csv
import io
import itertools
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

# POT probes every installed array backend on import; only numpy is needed.
for _backend in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")

import ot  # noqa: E402

WEIGHT_TOL = 1e-12


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class DiscreteMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=np.float64)
        if pts.ndim != 2 or len(pts) < 1:
            raise ValueError("a measure needs at least one point")
        if w.shape != (len(pts),):
            raise ValueError(f"{len(w)} weights for {len(pts)} points")
        if np.any(w < 0):
            raise ValueError("negative weight")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite point coordinates")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        n = len(pts)
        if n < 1:
            raise ValueError("a measure needs at least one point")
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    # CSV: one point per row; a trailing column named "weight" is optional.
    def to_csv(self, path=None, with_weights: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = [f"x{i}" for i in range(self.dim)] + (["weight"] if with_weights else [])
        w.writerow(header)
        for p, wt in zip(self.points, self.weights):
            row = [repr(float(v)) for v in p]
            if with_weights:
                row.append(repr(float(wt)))
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "DiscreteMeasure":
        text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise ValueError("empty CSV")
        header = rows[0]
        try:
            [float(v) for v in header]
            body = rows
            header = None
        except ValueError:
            body = rows[1:]
        data = np.array([[float(v) for v in r] for r in body if r], dtype=np.float64)
        if header is not None and header[-1].strip().lower() == "weight":
            return cls(data[:, :-1], data[:, -1])
        return cls.uniform(data)


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray
    p: float = 1.0
    metric: str = "euclidean"

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class TransportPlan:
    coupling: np.ndarray


@dataclass(frozen=True)
class DualPotentials:
    phi: np.ndarray
    psi: np.ndarray
    admissible: bool

    def value(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
        return float(self.phi @ mu.weights + self.psi @ nu.weights)


def _points(m) -> np.ndarray:
    return m.points if isinstance(m, DiscreteMeasure) else np.asarray(m, dtype=np.float64)


def cost_matrix(X, Y, p: float = 1.0) -> CostMatrix:
    """Euclidean ground cost raised to the power ``p``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    x, y = _points(X), _points(Y)
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    d = cdist(x, y, metric="euclidean")
    return CostMatrix(d if p == 1 else d**p, p=float(p))


def _entries(C) -> np.ndarray:
    return C.entries if isinstance(C, CostMatrix) else np.asarray(C, dtype=np.float64)


def exact_solve(
    mu: DiscreteMeasure, nu: DiscreteMeasure, C, max_iter: int = 10_000_000
) -> tuple[float, TransportPlan, DualPotentials]:
    """Network-simplex OT: optimal value, plan and potentials (``phi[0] == 0``)."""
    M = _entries(C)
    if mu.size < 1 or nu.size < 1:
        raise ValueError("degenerate measure")
    if M.shape != (mu.size, nu.size):
        raise ValueError(f"cost matrix {M.shape} does not match measures ({mu.size}, {nu.size})")
    M = np.ascontiguousarray(M, dtype=np.float64)
    G, log = ot.emd(mu.weights, nu.weights, M, numItermax=max_iter, log=True)
    if log["result_code"] != 1:
        raise SolverError(
            f"network simplex did not reach optimality within {max_iter} iterations: {log['warning']}"
        )
    u, v = np.asarray(log["u"], dtype=np.float64), np.asarray(log["v"], dtype=np.float64)
    shift = u[0]
    u, v = u - shift, v + shift
    # the simplex duals are feasible up to rounding; pull psi down onto the constraint
    slack = np.min(M - u[:, None] - v[None, :], axis=0)
    v = v + np.minimum(slack, 0.0)
    value = float(np.sum(G * M))
    return value, TransportPlan(G), DualPotentials(u, v, admissible=True)


def wasserstein1(X, Y) -> float:
    """Exact W1 between uniform clouds."""
    mu, nu = DiscreteMeasure.uniform(_points(X)), DiscreteMeasure.uniform(_points(Y))
    return exact_solve(mu, nu, cost_matrix(mu, nu, 1))[0]


def brute_force_solve(mu: DiscreteMeasure, nu: DiscreteMeasure, C) -> float:
    """Minimum mean matched cost over all permutations (uniform, N = M <= 8)."""
    M = _entries(C)
    n = mu.size
    if nu.size != n or not (mu.is_uniform() and nu.is_uniform()):
        raise ValueError("brute force needs uniform measures of equal size")
    if n > 8:
        raise ValueError("brute force is limited to N <= 8")
    rows = np.arange(n)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, float(M[rows, perm].sum()))
    return best / n

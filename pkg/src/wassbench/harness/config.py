"""Experiment configuration: YAML files, dotted overrides, validation.

A config file is a YAML mapping.  Keys not listed in :class:`ExperimentConfig`
are rejected so typos fail loudly.  Example::

    experiment: approximation
    seed: 3
    dataset: {kind: mnist, normalization: unit}
    repeats: 5
    methods:
      - {method: WC}
      - {method: GP}
      - {method: CT}
      - {method: CEPS, eps: 0.1}
      - {method: CEPS, eps: 1.0}
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..estimators import EstimatorConfig

EXPERIMENTS = ("approximation", "stability", "toy-wgan", "oracle-check")


class ConfigError(ValueError):
    pass


def default_methods(experiment: str) -> list[dict]:
    if experiment == "toy-wgan":
        return [{"method": "WC"}, {"method": "GP"}, {"method": "CT"}, {"method": "CEPS", "eps": 0.1}]
    if experiment == "stability":
        return [{"method": "CEPS", "eps": 1.0}, {"method": "CT"}, {"method": "GP"}, {"method": "WC"}]
    return [
        {"method": "WC"},
        {"method": "GP"},
        {"method": "CT"},
        {"method": "CEPS", "eps": 0.1},
        {"method": "CEPS", "eps": 1.0},
    ]


def default_dataset(experiment: str) -> dict:
    if experiment == "toy-wgan":
        return {"kind": "ring", "modes": 8, "radius": 2.0, "std": 0.1}
    if experiment == "oracle-check":
        return {"kind": "random"}
    return {"kind": "mnist", "normalization": "unit"}


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    dataset: dict = field(default_factory=dict)
    methods: list = field(default_factory=list)
    batch_size: int = 64
    train_iterations: int = 500
    eval_batches: int = 100
    repeats: int = 5
    # stability
    subset_size: int = 512
    train_sizes: list = field(default_factory=lambda: [64, 512])
    eval_sizes: list = field(default_factory=lambda: [64, 512])
    # toy WGAN
    generator_iterations: int = 2000
    disc_iterations: int = 5
    latent_dim: int = 2
    snapshot_every: int = 100
    snapshot_size: int = 512
    generator_optimizer: str | None = None
    generator_lr: float | None = None
    # ground-truth solvers
    sinkhorn_max_iter: int = 1000
    sinkhorn_tol: float = 1e-9
    # oracle check
    instances: int = 200
    max_points: int = 6
    dims: list = field(default_factory=lambda: [1, 2, 3])
    # plumbing
    record_timing: bool = True
    jobs: int = 1
    out_dir: str = "results"
    formats: list = field(default_factory=lambda: ["csv", "json"])

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if not self.dataset:
            self.dataset = default_dataset(self.experiment)
        if not self.methods:
            self.methods = default_methods(self.experiment)
        for name in ("batch_size", "eval_batches", "repeats", "subset_size", "disc_iterations",
                     "latent_dim", "snapshot_size", "instances", "jobs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("train_iterations", "generator_iterations", "snapshot_every"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 1 <= self.max_points <= 8:
            raise ConfigError("max_points must lie in [1, 8] (brute force is factorial)")
        bad = [f for f in self.formats if f not in ("csv", "json", "svg")]
        if bad:
            raise ConfigError(f"unknown output formats {bad}")
        self.estimators()  # validate eagerly

    def estimators(self) -> list[EstimatorConfig]:
        out = []
        for i, m in enumerate(self.methods):
            if not isinstance(m, dict) or "method" not in m:
                raise ConfigError(f"methods[{i}] must be a mapping with a 'method' key")
            kw = dict(m)
            kw.setdefault("iterations", self.train_iterations)
            kw.setdefault("batch_size", self.batch_size)
            try:
                out.append(EstimatorConfig(**kw))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"methods[{i}]: {exc}") from exc
        return out

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value: str) -> Any:
    return yaml.safe_load(value)


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``a.b=value`` strings; values are parsed as YAML scalars/lists."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {key!r}: {p!r} is not a mapping")
        node[parts[-1]] = _coerce(value)
    return raw


def build_config(raw: dict) -> ExperimentConfig:
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    if "experiment" not in raw:
        raise ConfigError("config needs an 'experiment' key")
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, experiment: str | None = None, overrides: list[str] | None = None) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config root must be a mapping")
        raw.update(loaded)
    if experiment is not None:
        if raw.get("experiment", experiment) != experiment:
            raise ConfigError(f"config is for {raw['experiment']!r}, not {experiment!r}")
        raw["experiment"] = experiment
    apply_overrides(raw, overrides or [])
    return build_config(raw)

from .config import ConfigError, ExperimentConfig, load_config
from .experiments import run, run_approximation, run_oracle_check, run_stability, run_toy_wgan
from .report import ExperimentReport, emit_report
from ..estimators import error_metric

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "emit_report",
    "error_metric",
    "load_config",
    "run",
    "run_approximation",
    "run_oracle_check",
    "run_stability",
    "run_toy_wgan",
]

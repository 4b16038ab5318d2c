"""Benchmarking dual estimators of the 1-Wasserstein distance used by WGANs."""

__version__ = "0.1.0"

"""Experiment orchestration: configuration, runs, sweeps and verification."""

from .config import ConfigError, ExperimentConfig, from_dict, load_config
from .experiment import METRICS_HEADER, RunResult, privacy_report, run_experiment
from .sweep import GridError, parse_grid, sweep
from .verify import Check, verify

__all__ = [
    "Check",
    "ConfigError",
    "ExperimentConfig",
    "GridError",
    "METRICS_HEADER",
    "RunResult",
    "from_dict",
    "load_config",
    "parse_grid",
    "privacy_report",
    "run_experiment",
    "sweep",
    "verify",
]

"""Experiment procedures, numerical bound checks and their reports."""

from .bounds import bound_checks
from .config import DEFAULTS, ConfigError, parse_config_text, resolve, snapshot
from .experiments import (
    e1_accuracy,
    e2_gauge,
    e3_metric_sweep,
    e4_cross_resolution,
    e5_hodge,
    e6a_lambda_sweep,
    e6b_smoothness,
)
from .models import clear_cache
from .report import ExperimentReport, SweepSpec

EXPERIMENTS = {
    "e1": e1_accuracy,
    "e2": e2_gauge,
    "e3": e3_metric_sweep,
    "e4": e4_cross_resolution,
    "e5": e5_hodge,
    "e6a": e6a_lambda_sweep,
    "e6b": e6b_smoothness,
    "bounds": bound_checks,
}

__all__ = [
    "DEFAULTS", "EXPERIMENTS", "ConfigError", "ExperimentReport", "SweepSpec",
    "bound_checks", "clear_cache", "e1_accuracy", "e2_gauge", "e3_metric_sweep",
    "e4_cross_resolution", "e5_hodge", "e6a_lambda_sweep", "e6b_smoothness",
    "parse_config_text", "resolve", "snapshot",
]

"""Experiment harness: configuration, runs, suites and plot data."""

from .config import PROFILES, ExperimentConfig, resolve  # noqa: F401
from .runner import emit_plot_data, run_experiment, run_suite  # noqa: F401

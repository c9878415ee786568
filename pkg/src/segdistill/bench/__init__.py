"""Experiment harness: configs, the benchmark pipeline, reports and the CLI."""

from .cli import main
from .config import (
    ArmSpec,
    ConfigError,
    DatasetSpec,
    ExperimentConfig,
    desk_config,
    desk_encoder_config,
    load_config,
    reference_arms_config,
    parse_config,
)
from .pipeline import ArmFailedError, build_arm_network, run_benchmark, run_seed, train_arm
from .report import ResultRow, render_table, summarize, write_results_csv

__all__ = [
    "ArmFailedError", "ArmSpec", "ConfigError", "DatasetSpec", "ExperimentConfig", "ResultRow",
    "build_arm_network", "desk_config", "desk_encoder_config", "load_config", "main",
    "reference_arms_config", "parse_config", "render_table", "run_benchmark", "run_seed", "summarize",
    "train_arm", "write_results_csv",
]

"""Experiment loop, configuration, exports and command-line entry point."""
from .config import ConfigError, ExperimentConfig, load_config
from .engine import RunResult, evaluate_row, run, run_ablation, run_clops, run_fine_tune, run_mir, run_mtl

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunResult",
    "evaluate_row",
    "load_config",
    "run",
    "run_ablation",
    "run_clops",
    "run_fine_tune",
    "run_mir",
    "run_mtl",
]

"""Experiment runner: configs, sweeps and reports."""

from .config import ExperimentConfig, config_from_dict, load_config
from .report import SummaryRow, SweepRow, emit_report, read_rows, svg_chart, write_csv
from .sweeps import (
    FlowRow,
    SweepResult,
    pooled_ordering,
    run_decision_sweep,
    run_flow_sweep,
    run_probe_sweep,
    run_reversion_sweep,
    run_training,
)

__all__ = [
    "ExperimentConfig",
    "FlowRow",
    "SummaryRow",
    "SweepResult",
    "SweepRow",
    "config_from_dict",
    "emit_report",
    "load_config",
    "pooled_ordering",
    "read_rows",
    "run_decision_sweep",
    "run_flow_sweep",
    "run_probe_sweep",
    "run_reversion_sweep",
    "run_training",
    "svg_chart",
    "write_csv",
]

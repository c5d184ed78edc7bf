"""Experiment configuration, sweeps, metrics, statistics and plots."""
from .config import ConfigError, ExperimentConfig, desk_config, scan_protocol
from .metrics import (
    METRICS,
    MetricsRecord,
    SectionError,
    StrouhalInputs,
    concentration_rmse,
    decile_errors,
    outlet_ratio,
    section_flow,
    strouhal_threshold,
    velocity_timeseries,
)
from .plots import emit_plots, read_records_csv, write_records_csv
from .stats import TTestResult, paired_ttest_bonferroni, welch_ttest
from .sweep import SweepResult, collect_records, run_cell, run_sweep

__all__ = [
    "ConfigError", "ExperimentConfig", "desk_config", "scan_protocol", "METRICS", "MetricsRecord", "SectionError",
    "StrouhalInputs", "concentration_rmse", "decile_errors", "outlet_ratio", "section_flow", "strouhal_threshold",
    "velocity_timeseries", "emit_plots", "read_records_csv", "write_records_csv", "TTestResult",
    "paired_ttest_bonferroni", "welch_ttest", "SweepResult", "collect_records", "run_cell", "run_sweep",
]

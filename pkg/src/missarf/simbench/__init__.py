"""Simulation study: data generation, amputation, baselines, metrics and the grid runner."""

from .amputation import AmputeSpec, ampute, mar_driver
from .baselines import baseline_median, baseline_random, mean_over_imputations
from .metrics import (
    CoverageSummary,
    LogisticFit,
    PooledEstimate,
    brier,
    coverage_stats,
    fit_logistic,
    nrmse,
    pool_rubin,
)
from .runner import (
    BenchmarkConfig,
    ConfigError,
    ResultRow,
    evaluate,
    load_config,
    parse_config,
    read_results,
    run_benchmark,
    summarize,
    write_results,
)
from .simulate import SimSpec, simulate_features, simulate_outcome, toeplitz_corr, true_beta

__all__ = [
    "AmputeSpec",
    "ampute",
    "mar_driver",
    "baseline_median",
    "baseline_random",
    "mean_over_imputations",
    "CoverageSummary",
    "LogisticFit",
    "PooledEstimate",
    "brier",
    "coverage_stats",
    "fit_logistic",
    "nrmse",
    "pool_rubin",
    "BenchmarkConfig",
    "ConfigError",
    "ResultRow",
    "evaluate",
    "load_config",
    "parse_config",
    "read_results",
    "run_benchmark",
    "summarize",
    "write_results",
    "SimSpec",
    "simulate_features",
    "simulate_outcome",
    "toeplitz_corr",
    "true_beta",
]

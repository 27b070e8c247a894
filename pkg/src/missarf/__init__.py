"""Adversarial random forests for density estimation and missing-value imputation."""

__version__ = "0.1.0"

from .tabular import (  # noqa: E402
    MISSING,
    ColumnSchema,
    Dataset,
    StandardizationParams,
    categorical,
    numeric,
    read_csv,
    standardize,
    write_csv,
)
from .forest import ForestParams, best_split_mia, fit_forest, oob_accuracy, route  # noqa: E402
from .arf import adversarial_fit, extract_leaves, leaf_resample, naive_synth  # noqa: E402
from .density import fit_leaf_densities, log_density, sample_unconditional  # noqa: E402
from .model import ArfModel, fit_arf, load_model, save_model  # noqa: E402
from .impute import (  # noqa: E402
    ImputationConfig,
    ImputedSet,
    adjusted_weights,
    impute,
    impute_dataset,
    impute_row_expectation,
    impute_row_sample,
)

__all__ = [
    "MISSING",
    "ColumnSchema",
    "Dataset",
    "StandardizationParams",
    "categorical",
    "numeric",
    "read_csv",
    "standardize",
    "write_csv",
    "ForestParams",
    "best_split_mia",
    "fit_forest",
    "oob_accuracy",
    "route",
    "adversarial_fit",
    "extract_leaves",
    "leaf_resample",
    "naive_synth",
    "fit_leaf_densities",
    "log_density",
    "sample_unconditional",
    "ArfModel",
    "fit_arf",
    "load_model",
    "save_model",
    "ImputationConfig",
    "ImputedSet",
    "adjusted_weights",
    "impute",
    "impute_dataset",
    "impute_row_expectation",
    "impute_row_sample",
]

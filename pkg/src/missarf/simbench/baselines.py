"""Reference imputers and the reduction of multiple imputations to one dataset."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .._rng import as_generator, derive_generator, draw_key
from ..impute import ImputedSet
from ..tabular import Dataset, DataError


def _check_observed(data: Dataset) -> None:
    empty = data.missing_mask.all(axis=0)
    if empty.any():
        names = [data.names[j] for j in np.flatnonzero(empty)]
        raise DataError(f"columns with no observed value: {names}")


def baseline_random(data: Dataset, m: int = 1, rng=None) -> ImputedSet:
    """Fill every missing cell with a uniform draw from the column's observed cells."""
    if m < 1:
        raise ValueError("m must be >= 1")
    _check_observed(data)
    key = draw_key(as_generator(rng))
    miss = data.missing_mask
    outs = []
    for k in range(m):
        g = derive_generator(key, k)
        X = np.array(data.values)
        for j in np.flatnonzero(miss.any(axis=0)):
            col = data.values[:, j]
            obs = col[~miss[:, j]]
            rows = np.flatnonzero(miss[:, j])
            X[rows, j] = obs[g.integers(0, obs.size, size=rows.size)]
        outs.append(data.with_values(X))
    return ImputedSet(outs, None, provenance={"method": "random", "m": m})


def column_fill_values(data: Dataset) -> np.ndarray:
    """Median of each numeric column, mode of each categorical column.

    An even count gives the midpoint of the two middle values; a tied mode
    goes to the label listed first in the schema.
    """
    _check_observed(data)
    out = np.zeros(data.p)
    for j in range(data.p):
        col = data.values[:, j]
        obs = col[~np.isnan(col)]
        if obs.size == 0:
            continue
        if data.is_categorical[j]:
            counts = np.bincount(obs.astype(np.int64), minlength=len(data.schema[j].categories))
            out[j] = float(np.argmax(counts))
        else:
            out[j] = float(np.median(obs))
    return out


def baseline_median(data: Dataset) -> Dataset:
    """Fill missing numeric cells with the column median, categorical with the mode."""
    fill = column_fill_values(data)
    X = np.where(np.isnan(data.values), fill[None, :], data.values)
    return data.with_values(X)


def mean_over_imputations(datasets: Sequence[Dataset]) -> Dataset:
    """Cell-wise mean of numeric columns and mode of categorical columns
    (ties to the first label in schema order)."""
    if not datasets:
        raise ValueError("need at least one dataset")
    first = datasets[0]
    if any(not d.same_schema(first) or d.shape != first.shape for d in datasets):
        raise ValueError("datasets differ in schema or shape")
    stack = np.stack([d.values for d in datasets])
    out = stack.mean(axis=0)
    for j in np.flatnonzero(first.is_categorical):
        k = len(first.schema[j].categories)
        codes = stack[:, :, j].astype(np.int64)
        counts = np.stack([(codes == c).sum(axis=0) for c in range(k)], axis=1)
        out[:, j] = np.argmax(counts, axis=1)
    return first.with_values(out)

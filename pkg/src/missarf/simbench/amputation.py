"""Introduce missing values under MCAR, MAR and MNAR mechanisms.

Every target column loses ``round(q * n)`` cells. Under MCAR they are chosen
uniformly among all rows. Under MAR and MNAR the rows are split at the median
of a driver column (another never-amputed column for MAR, the target itself
for MNAR), one side is picked at random and the cells are chosen uniformly
inside it; if that side is too small the count is reduced to its size.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .._rng import as_generator
from ..tabular import Dataset

logger = logging.getLogger(__name__)

MECHANISMS = ("MCAR", "MAR", "MNAR")


@dataclass(frozen=True)
class AmputeSpec:
    mechanism: str = "MCAR"
    proportion: float = 0.2
    targets: Optional[Sequence[int]] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}; expected one of {MECHANISMS}")
        if not 0 < self.proportion < 1:
            raise ValueError("proportion must lie strictly between 0 and 1")

    def target_columns(self, p: int) -> list:
        if self.targets is None:
            return list(range(math.ceil(p / 2)))
        cols = sorted(set(int(j) for j in self.targets))
        if not cols or cols[0] < 0 or cols[-1] >= p:
            raise ValueError(f"target columns {self.targets} out of range for p={p}")
        return cols


@dataclass
class AmputationLog:
    """What was done to each target column (for tests and diagnostics)."""

    column: int
    driver: Optional[int]
    side: Optional[str]
    requested: int
    removed: int


def mar_driver(target: int, never: Sequence[int]) -> int:
    """Nearest never-amputed column by index; the lower index wins ties."""
    return min(never, key=lambda k: (abs(k - target), k))


def _median_groups(values: np.ndarray, rng) -> tuple:
    med = np.median(values)
    low = np.flatnonzero(values <= med)
    high = np.flatnonzero(values > med)
    if rng.random() < 0.5:
        return low, "low"
    return high, "high"


def ampute(data: Dataset, spec: AmputeSpec, rng=None, log: Optional[list] = None) -> Dataset:
    """Copy of ``data`` with missing values in the target columns."""
    rng = as_generator(spec.seed if rng is None else rng)
    targets = spec.target_columns(data.p)
    never = [j for j in range(data.p) if j not in targets]
    X = np.array(data.values)
    n = data.n
    want = int(round(spec.proportion * n))
    if spec.mechanism == "MAR":
        if not never:
            raise ValueError("MAR needs at least one column that is never amputed")
        obs = ~np.isnan(X[:, never]).any(axis=0)
        never = [j for j, ok in zip(never, obs) if ok]
        if not never:
            raise ValueError("MAR needs a fully observed driver column")
    for j in targets:
        if spec.mechanism == "MCAR":
            pool, driver, side = np.arange(n), None, None
        else:
            driver = mar_driver(j, never) if spec.mechanism == "MAR" else j
            col = data.values[:, driver]
            ok = np.flatnonzero(~np.isnan(col))
            sub, side = _median_groups(col[ok], rng)
            pool = ok[sub]
        k = min(want, pool.size)
        if k < want:
            logger.info("column %d: missing count lowered from %d to %d", j, want, k)
        rows = rng.choice(pool, size=k, replace=False) if k else np.zeros(0, dtype=np.int64)
        X[rows, j] = np.nan
        if log is not None:
            log.append(AmputationLog(j, driver, side, want, k))
    return data.with_values(X)

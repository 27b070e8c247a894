"""Adversarial training loop and leaf geometry."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from . import _trees
from ._rng import as_generator, derive_generator, draw_key
from .forest import Forest, ForestParams, fit_forest, oob_accuracy
from .tabular import Dataset, DataError

logger = logging.getLogger(__name__)


@dataclass
class ArfFitReport:
    iterations: int
    accuracy: list = field(default_factory=list)
    converged: bool = False
    delta: float = 0.0


def naive_synth(real: Dataset, rng=None) -> Dataset:
    """Bootstrap each column independently (missing cells included)."""
    rng = as_generator(rng)
    n = real.n
    out = np.empty_like(real.values)
    for j in range(real.p):
        out[:, j] = real.values[rng.integers(0, n, size=n), j]
    return real.with_values(out)


def leaf_resample(forest: Forest, real: Dataset, rng=None, size: Optional[int] = None) -> Dataset:
    """Synthetic rows drawn as: a leaf by coverage weight, then every column
    independently from that leaf's real rows."""
    rng = as_generator(rng)
    size = real.n if size is None else int(size)
    w = forest.leaf_weights()
    leaves = rng.choice(w.size, size=size, p=w / w.sum())
    counts = forest.leaf_n_real[leaves]
    start = forest.leaf_rows_ptr[leaves]
    out = np.empty((size, real.p))
    for j in range(real.p):
        pick = np.minimum((rng.random(size) * counts).astype(np.int64), counts - 1)
        out[:, j] = real.values[forest.leaf_rows[start + pick], j]
    return real.with_values(out)


def adversarial_fit(
    real: Dataset,
    params: ForestParams = ForestParams(),
    delta: float = 0.0,
    max_iters: int = 10,
    rng=None,
    threads: Optional[int] = None,
) -> tuple[Forest, ArfFitReport]:
    """Alternate synthetic-data generation and discriminator fitting.

    The first forest separates the data from column-wise bootstrap copies;
    each later round resamples inside the previous forest's leaves. The loop
    stops as soon as a forest's OOB accuracy drops below ``0.5 + delta`` and
    returns that forest. ``max_iters`` bounds the number of refinement rounds
    after the first fit; if it runs out, the last forest is returned with
    ``converged=False``.
    """
    if real.n < 2:
        raise DataError("adversarial_fit needs at least 2 rows")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")
    key = draw_key(rng)
    g = derive_generator(key, 0)
    synth = naive_synth(real, g)
    forest = fit_forest(real, synth, params, g, threads=threads)
    acc = oob_accuracy(forest, real, synth)
    trace = [acc]
    logger.debug("arf iteration 1: oob accuracy %.4f", acc)
    rounds = 0
    while acc >= 0.5 + delta and rounds < max_iters:
        rounds += 1
        g = derive_generator(key, rounds)
        synth = leaf_resample(forest, real, g)
        forest = fit_forest(real, synth, params, g, threads=threads)
        acc = oob_accuracy(forest, real, synth)
        trace.append(acc)
        logger.debug("arf iteration %d: oob accuracy %.4f", rounds + 1, acc)
    report = ArfFitReport(iterations=len(trace), accuracy=trace,
                          converged=acc < 0.5 + delta, delta=float(delta))
    if not report.converged:
        logger.warning("ARF did not converge after %d iterations (last accuracy %.4f)",
                       report.iterations, acc)
    return forest, report


# -- leaf geometry --------------------------------------------------------------


@njit(cache=True)
def _node_bounds(feature, threshold, left, right, cat_left, cat_right, na_side,
                 roots, is_cat, n_cats):
    n_nodes = feature.shape[0]
    p = is_cat.shape[0]
    lo = np.empty((n_nodes, p))
    hi = np.empty((n_nodes, p))
    allowed = np.zeros((n_nodes, p), dtype=np.uint64)
    na_only = np.zeros((n_nodes, p), dtype=np.bool_)
    full = np.zeros(p, dtype=np.uint64)
    for j in range(p):
        if is_cat[j]:
            k = n_cats[j]
            full[j] = np.uint64(0xFFFFFFFFFFFFFFFF) if k >= 64 else (np.uint64(1) << np.uint64(k)) - np.uint64(1)
    for r in roots:
        for j in range(p):
            lo[r, j] = -np.inf
            hi[r, j] = np.inf
            allowed[r, j] = full[j]
    # children always have larger ids than their parent
    for node in range(n_nodes):
        f = feature[node]
        if f < 0:
            continue
        for child in (left[node], right[node]):
            lo[child] = lo[node]
            hi[child] = hi[node]
            allowed[child] = allowed[node]
            na_only[child] = na_only[node]
        lc = left[node]
        rc = right[node]
        if na_side[node] == _trees.NA_LEFT:
            na_only[lc, f] = True
        elif is_cat[f]:
            allowed[lc, f] &= cat_left[node]
        else:
            hi[lc, f] = min(hi[lc, f], threshold[node])
        if na_side[node] == _trees.NA_RIGHT:
            na_only[rc, f] = True
        elif is_cat[f]:
            allowed[rc, f] &= cat_right[node]
        else:
            lo[rc, f] = max(lo[rc, f], threshold[node])
    return lo, hi, allowed, na_only


@dataclass(frozen=True)
class LeafGeometry:
    """One leaf's region: numeric features lie in ``(lo, hi]``, categorical
    features take a code in ``allowed``; ``missing_only`` lists features that
    only missing values reach in this leaf."""

    leaf_id: int
    tree: int
    lo: np.ndarray
    hi: np.ndarray
    allowed: tuple
    missing_only: frozenset
    weight: float
    row_ids: np.ndarray

    def contains(self, values: np.ndarray, categorical: Sequence[bool]) -> bool:
        """Whether every observed coordinate of ``values`` lies in the region."""
        for j, v in enumerate(values):
            if np.isnan(v):
                continue
            if j in self.missing_only:
                return False
            if categorical[j]:
                if int(v) not in self.allowed[j]:
                    return False
            elif not (self.lo[j] < v <= self.hi[j]):
                return False
        return True


class LeafSet(Sequence):
    """Geometry and coverage weights of every leaf of a forest, as arrays.

    Indexing yields :class:`LeafGeometry` views.
    """

    def __init__(self, forest: Forest, lo, hi, allowed, na_only, weight):
        self.forest = forest
        self.lo = lo
        self.hi = hi
        self.allowed = allowed
        self.na_only = na_only
        self.weight = weight

    def __len__(self) -> int:
        return self.weight.shape[0]

    def __getitem__(self, l):
        if isinstance(l, slice):
            return [self[k] for k in range(*l.indices(len(self)))]
        f = self.forest
        cats = f.is_categorical
        allowed = tuple(
            frozenset(b for b in range(64) if (int(self.allowed[l, j]) >> b) & 1) if cats[j] else None
            for j in range(len(cats))
        )
        return LeafGeometry(
            leaf_id=int(l),
            tree=int(f.leaf_tree[l]),
            lo=self.lo[l].copy(),
            hi=self.hi[l].copy(),
            allowed=allowed,
            missing_only=frozenset(np.flatnonzero(self.na_only[l]).tolist()),
            weight=float(self.weight[l]),
            row_ids=f.leaf_row_ids(l).copy(),
        )


def extract_leaves(forest: Forest, real: Optional[Dataset] = None) -> LeafSet:
    """Bounds (path conjunctions) and weights n_tl / (T n_t) for every leaf."""
    is_cat = forest.is_categorical
    n_cats = np.array([len(c.categories) for c in forest.schema], dtype=np.int64)
    lo, hi, allowed, na_only = _node_bounds(
        forest.feature, forest.threshold, forest.left, forest.right,
        forest.cat_left, forest.cat_right, forest.na_side, forest.roots, is_cat, n_cats,
    )
    nodes = forest.leaf_node
    return LeafSet(forest, lo[nodes], hi[nodes], allowed[nodes], na_only[nodes],
                   forest.leaf_weights())

"""Random-forest discriminator with missingness incorporated in attributes (MIA).

Real rows are labelled 1 and synthetic rows 0. Each tree is grown on a
bootstrap sample of the stacked rows; missing values are routed to whichever
child gives the lower Gini impurity, learned per split.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import _trees
from ._rng import derive_generator, draw_key
from .tabular import Dataset, SchemaError


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    min_node_size: int = 10
    mtry: Optional[int] = None

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")

    def resolved_mtry(self, p: int) -> int:
        if self.mtry is None:
            return max(1, math.ceil(math.sqrt(p)))
        return min(self.mtry, p)


@dataclass(frozen=True)
class SplitRule:
    """One split. Numeric: ``x <= threshold`` goes left. Categorical: codes in
    ``left_labels`` go left, codes in ``right_labels`` go right, anything else
    (missing, or a label not seen at this node) follows ``missing_goes``."""

    feature: int
    kind: str
    threshold: float = math.nan
    left_labels: frozenset = frozenset()
    right_labels: frozenset = frozenset()
    missing_goes: str = "left"
    missing_only: Optional[str] = None

    def goes_left(self, value: float) -> bool:
        if math.isnan(value):
            return self.missing_goes == "left"
        if self.kind == "categorical":
            code = int(value)
            if code in self.left_labels:
                return True
            if code in self.right_labels:
                return False
            return self.missing_goes == "left"
        return value <= self.threshold


@dataclass
class TreeNode:
    rule: Optional[SplitRule] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    leaf_id: int = -1
    n_real: int = 0
    row_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def is_leaf(self) -> bool:
        return self.rule is None


def _mask_to_set(mask: int) -> frozenset:
    mask = int(mask)
    return frozenset(b for b in range(64) if (mask >> b) & 1)


def _set_to_mask(labels) -> np.uint64:
    out = 0
    for b in labels:
        out |= 1 << int(b)
    return np.uint64(out)


def _na_label(code: int) -> Optional[str]:
    return {_trees.NA_LEFT: "left", _trees.NA_RIGHT: "right"}.get(int(code))


def best_split_mia(
    x,
    labels,
    rows=None,
    categorical: bool = False,
    n_categories: int = 0,
    min_node_size: int = 1,
    feature: int = 0,
) -> Optional[tuple[SplitRule, float]]:
    """Lowest weighted-Gini split of one feature over ``rows``.

    For a numeric feature every midpoint threshold is scored twice, with the
    missing values sent left and then right; a categorical feature treats
    missing as one more label. Returns None when the node is pure or no
    candidate leaves both children with ``min_node_size`` rows.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(labels, dtype=np.int64)
    if rows is None:
        rows = np.arange(x.shape[0], dtype=np.int64)
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("rows must be nonempty")
    if categorical:
        ok, score, cl, cr, ml, na = _trees.best_categorical_split(
            x, y, rows, int(n_categories), int(min_node_size)
        )
        if not ok:
            return None
        rule = SplitRule(
            feature,
            "categorical",
            left_labels=_mask_to_set(cl),
            right_labels=_mask_to_set(cr),
            missing_goes="left" if ml else "right",
            missing_only=_na_label(na),
        )
        return rule, float(score)
    ok, score, thr, ml, na = _trees.best_numeric_split(x, y, rows, int(min_node_size))
    if not ok:
        return None
    rule = SplitRule(
        feature,
        "numeric",
        threshold=float(thr),
        missing_goes="left" if ml else "right",
        missing_only=_na_label(na),
    )
    return rule, float(score)


@dataclass
class Forest:
    """A fitted forest stored as flat arrays over all trees.

    Node arrays are indexed by a global node id; ``roots[t]`` is the root of
    tree t. Leaves get global ids ``0..L-1`` in tree order; ``node_leaf`` maps
    a node to its leaf id (-1 for internal nodes). ``leaf_rows`` lists the real
    training rows (bootstrap draws, so possibly repeated) of each leaf,
    delimited by ``leaf_rows_ptr``.
    """

    params: ForestParams
    schema: tuple
    n_real: int
    n_synth: int
    roots: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    cat_left: np.ndarray
    cat_right: np.ndarray
    na_side: np.ndarray
    node_n: np.ndarray
    node_pos: np.ndarray
    node_leaf: np.ndarray
    leaf_node: np.ndarray
    leaf_tree: np.ndarray
    leaf_n_real: np.ndarray
    leaf_rows_ptr: np.ndarray
    leaf_rows: np.ndarray
    n_t: np.ndarray
    bags: np.ndarray

    @property
    def n_trees(self) -> int:
        return int(self.roots.shape[0])

    @property
    def n_leaves(self) -> int:
        return int(self.leaf_node.shape[0])

    @property
    def is_categorical(self) -> np.ndarray:
        return np.array([c.is_categorical for c in self.schema], dtype=bool)

    def leaf_row_ids(self, leaf: int) -> np.ndarray:
        return self.leaf_rows[self.leaf_rows_ptr[leaf]: self.leaf_rows_ptr[leaf + 1]]

    def leaf_weights(self) -> np.ndarray:
        """Coverage weights n_tl / (T * n_t) over all leaves of all trees."""
        n_t = self.n_t[self.leaf_tree].astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(n_t > 0, self.leaf_n_real / (self.n_trees * n_t), 0.0)
        return w

    def route_nodes(self, values: np.ndarray) -> np.ndarray:
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        return _trees.route_rows(
            values, self.is_categorical, self.roots, self.feature, self.threshold,
            self.missing_left, self.left, self.right, self.cat_left, self.cat_right,
        )

    def tree(self, t: int) -> TreeNode:
        """Tree ``t`` as linked :class:`TreeNode` objects."""

        def build(node: int) -> TreeNode:
            f = int(self.feature[node])
            if f < 0:
                lid = int(self.node_leaf[node])
                return TreeNode(leaf_id=lid, n_real=int(self.leaf_n_real[lid]),
                                row_ids=self.leaf_row_ids(lid).copy())
            return TreeNode(rule=self.split_rule(node), left=build(int(self.left[node])),
                            right=build(int(self.right[node])))

        return build(int(self.roots[t]))

    def split_rule(self, node: int) -> SplitRule:
        f = int(self.feature[node])
        ml = "left" if self.missing_left[node] else "right"
        na = _na_label(self.na_side[node])
        if self.schema[f].is_categorical:
            return SplitRule(f, "categorical", left_labels=_mask_to_set(self.cat_left[node]),
                             right_labels=_mask_to_set(self.cat_right[node]),
                             missing_goes=ml, missing_only=na)
        return SplitRule(f, "numeric", threshold=float(self.threshold[node]),
                         missing_goes=ml, missing_only=na)


def _check_schemas(real: Dataset, synth: Dataset) -> None:
    if not real.same_schema(synth):
        raise SchemaError("real and synthetic data have different schemas")


def _resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        return os.cpu_count() or 1
    return max(1, int(threads))


def fit_forest(
    real: Dataset,
    synth: Dataset,
    params: ForestParams = ForestParams(),
    rng=None,
    threads: Optional[int] = None,
) -> Forest:
    """Fit a real-vs-synthetic classification forest.

    Tree t draws its bootstrap sample and feature choices from a stream
    derived from one key drawn off ``rng`` and the index t, so the result does
    not depend on ``threads``.
    """
    _check_schemas(real, synth)
    X = np.ascontiguousarray(np.vstack([real.values, synth.values]))
    n_real, n_synth = real.n, synth.n
    N = n_real + n_synth
    y = np.concatenate([np.ones(n_real, dtype=np.int64), np.zeros(n_synth, dtype=np.int64)])
    is_cat = real.is_categorical
    n_cats = real.n_categories
    mtry = params.resolved_mtry(real.p)
    key = draw_key(rng)

    def one_tree(t: int):
        g = derive_generator(key, t)
        bag = g.integers(0, N, size=N).astype(np.int64)
        seed = int(g.integers(1, 2**63 - 1))
        out = _trees.grow_tree(X, y, is_cat, n_cats, bag, mtry, params.min_node_size, seed)
        return bag, out

    n_threads = _resolve_threads(threads)
    if n_threads > 1 and params.n_trees > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            grown = list(pool.map(one_tree, range(params.n_trees)))
    else:
        grown = [one_tree(t) for t in range(params.n_trees)]
    return _assemble(grown, params, real.schema, n_real, n_synth)


def _assemble(grown, params, schema, n_real, n_synth) -> Forest:
    feats, thrs, mls, lefts, rights, cls, crs, nas, nns, nps = ([] for _ in range(10))
    roots = []
    leaf_node, leaf_tree, leaf_n_real, leaf_rows, n_t = [], [], [], [], []
    bags = []
    offset = 0
    for t, (bag, out) in enumerate(grown):
        (feature, threshold, missing_left, left, right, cat_left, cat_right,
         na_side, node_start, node_end, node_pos, samples) = out
        k = feature.shape[0]
        roots.append(offset)
        feats.append(feature)
        thrs.append(threshold)
        mls.append(missing_left)
        lefts.append(np.where(left >= 0, left + offset, -1).astype(np.int64))
        rights.append(np.where(right >= 0, right + offset, -1).astype(np.int64))
        cls.append(cat_left)
        crs.append(cat_right)
        nas.append(na_side)
        nns.append(node_end - node_start)
        nps.append(node_pos)
        bags.append(bag)

        leaves = np.flatnonzero(feature < 0)
        # leaf segments partition the sample array; order them by position
        order = leaves[np.argsort(node_start[leaves], kind="stable")]
        lengths = node_end[order] - node_start[order]
        local_id = np.empty(k, dtype=np.int64)
        local_id[leaves] = np.arange(leaves.size)
        pos_leaf = np.repeat(local_id[order], lengths)
        is_real = samples < n_real
        rows = samples[is_real]
        rows_leaf = pos_leaf[is_real]
        sort = np.argsort(rows_leaf, kind="stable")
        counts = np.bincount(rows_leaf, minlength=leaves.size)
        leaf_node.append(leaves + offset)
        leaf_tree.append(np.full(leaves.size, t, dtype=np.int64))
        leaf_n_real.append(counts)
        leaf_rows.append(rows[sort])
        n_t.append(int(is_real.sum()))
        offset += k

    feature = np.concatenate(feats).astype(np.int64)
    leaf_node = np.concatenate(leaf_node)
    node_leaf = np.full(feature.shape[0], -1, dtype=np.int64)
    node_leaf[leaf_node] = np.arange(leaf_node.size)
    leaf_n_real = np.concatenate(leaf_n_real).astype(np.int64)
    ptr = np.zeros(leaf_n_real.size + 1, dtype=np.int64)
    np.cumsum(leaf_n_real, out=ptr[1:])
    return Forest(
        params=params,
        schema=tuple(schema),
        n_real=n_real,
        n_synth=n_synth,
        roots=np.array(roots, dtype=np.int64),
        feature=feature,
        threshold=np.concatenate(thrs),
        missing_left=np.concatenate(mls),
        left=np.concatenate(lefts),
        right=np.concatenate(rights),
        cat_left=np.concatenate(cls),
        cat_right=np.concatenate(crs),
        na_side=np.concatenate(nas),
        node_n=np.concatenate(nns).astype(np.int64),
        node_pos=np.concatenate(nps).astype(np.int64),
        node_leaf=node_leaf,
        leaf_node=leaf_node,
        leaf_tree=np.concatenate(leaf_tree),
        leaf_n_real=leaf_n_real,
        leaf_rows_ptr=ptr,
        leaf_rows=np.concatenate(leaf_rows).astype(np.int64),
        n_t=np.array(n_t, dtype=np.int64),
        bags=np.stack(bags).astype(np.int64),
    )


class NoOOBVotes(ValueError):
    pass


def oob_accuracy(forest: Forest, real: Dataset, synth: Dataset) -> float:
    """Out-of-bag accuracy of the forest's majority vote.

    Each tree votes with the majority class of its leaf among bootstrap rows.
    A row's prediction uses only trees whose bootstrap sample excludes it;
    rows no tree left out are skipped. An exact tie in a leaf or in the vote
    counts as half correct.
    """
    _check_schemas(real, synth)
    X = np.vstack([real.values, synth.values])
    N = X.shape[0]
    if N != forest.n_real + forest.n_synth:
        raise ValueError("forest was trained on a different number of rows")
    y = np.concatenate([np.ones(real.n), np.zeros(synth.n)])
    nodes = forest.route_nodes(X)
    frac = forest.node_pos[nodes] / forest.node_n[nodes]
    vote = np.where(frac > 0.5, 1.0, np.where(frac < 0.5, 0.0, 0.5))
    inbag = np.zeros((forest.n_trees, N), dtype=bool)
    rows = np.repeat(np.arange(forest.n_trees), forest.bags.shape[1])
    inbag[rows, forest.bags.ravel()] = True
    oob = ~inbag.T
    n_votes = oob.sum(axis=1)
    keep = n_votes > 0
    if not keep.any():
        raise NoOOBVotes("no OOB votes")
    share = (vote * oob).sum(axis=1)[keep] / n_votes[keep]
    pred = np.where(share > 0.5, 1.0, np.where(share < 0.5, 0.0, 0.5))
    correct = np.where(pred == 0.5, 0.5, (pred == y[keep]).astype(float))
    return float(correct.mean())


def route(forest: Forest, row: Union[Sequence, np.ndarray]) -> np.ndarray:
    """Global leaf id reached by ``row`` in each tree.

    ``row`` is either encoded floats (NaN for missing) or cells as accepted
    by :meth:`Dataset.from_rows`.
    """
    if isinstance(row, np.ndarray) and row.dtype.kind == "f":
        arr = row
    else:
        arr = Dataset.from_rows(forest.schema, [list(row)]).values[0]
    nodes = forest.route_nodes(arr)[0]
    return forest.node_leaf[nodes]


def route_dataset(forest: Forest, data: Dataset) -> np.ndarray:
    """(n, T) global leaf ids for every row of ``data``."""
    return forest.node_leaf[forest.route_nodes(data.values)]

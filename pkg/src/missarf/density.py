"""Leaf-wise density estimation and generation on top of a fitted forest.

Inside each leaf every feature gets its own univariate model: a normal
truncated to the leaf's interval for numeric features, a multinomial over the
leaf's allowed labels for categorical ones. The forest density is the
coverage-weighted mixture of the leaf-wise product densities.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import truncnorm
from ._conditional import candidate_leaves
from ._rng import as_generator
from .arf import LeafSet, extract_leaves
from .forest import Forest
from .tabular import Dataset, SchemaError

logger = logging.getLogger(__name__)

SIGMA_ABS_FLOOR = 1e-9
SIGMA_REL_FLOOR = 0.1


@dataclass
class DensityModel:
    """Per-leaf density parameters for every leaf with positive weight.

    Arrays are indexed ``[leaf, feature]``; ``leaf_id`` maps rows back to the
    forest's leaf ids and ``node_density`` maps forest nodes to rows (-1 when
    the node is internal or its leaf has zero weight). ``cat_prob`` is
    ``[leaf, categorical slot, label]``; ``cat_slot[j]`` is the slot of
    column j (-1 for numeric columns).
    """

    forest: Forest
    leaf_id: np.ndarray
    weight: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    allowed: np.ndarray
    na_only: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    raw_mean: np.ndarray
    uniform: np.ndarray
    log_norm: np.ndarray
    trunc_mean: np.ndarray
    cat_prob: np.ndarray
    cat_slot: np.ndarray
    col_min: np.ndarray
    col_max: np.ndarray
    col_mean: np.ndarray
    col_freq: np.ndarray
    smoothing: float = 0.0

    @property
    def schema(self):
        return self.forest.schema

    @property
    def n_leaves(self) -> int:
        return int(self.weight.shape[0])

    @property
    def p(self) -> int:
        return int(self.mu.shape[1])

    @property
    def is_categorical(self) -> np.ndarray:
        return self.forest.is_categorical

    @property
    def node_density(self) -> np.ndarray:
        out = np.full(self.forest.feature.shape[0], -1, dtype=np.int64)
        out[self.forest.leaf_node[self.leaf_id]] = np.arange(self.n_leaves)
        return out

    @property
    def cat_logp(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.cat_prob)

    def leaf_log_density(self, d: int, x: np.ndarray) -> float:
        """log of the leaf-wise product density over the observed cells of ``x``."""
        total = 0.0
        for j, v in enumerate(x):
            if np.isnan(v):
                continue
            total += float(self.feature_logpdf(d, j, v))
        return total

    def feature_logpdf(self, d: int, j: int, v: float) -> float:
        if self.na_only[d, j]:
            return -np.inf
        if self.is_categorical[j]:
            c = int(v)
            prob = self.cat_prob[d, self.cat_slot[j], c] if c < self.cat_prob.shape[2] else 0.0
            return float(np.log(prob)) if prob > 0 else -np.inf
        lo, hi = self.lo[d, j], self.hi[d, j]
        if not (lo < v <= hi):
            return -np.inf
        if self.uniform[d, j]:
            return float(-np.log(hi - lo))
        z = (v - self.mu[d, j]) / self.sigma[d, j]
        return float(-0.5 * z * z - self.log_norm[d, j])


def _group_stats(values, group, n_groups):
    """Count, mean, SD (ddof=1), min and max of ``values`` per group."""
    cnt = np.bincount(group, minlength=n_groups).astype(np.float64)
    s = np.bincount(group, weights=values, minlength=n_groups)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s / cnt
        dev = values - mean[group]
        ss = np.bincount(group, weights=dev * dev, minlength=n_groups)
        sd = np.sqrt(ss / (cnt - 1))
    vmin = np.full(n_groups, np.inf)
    vmax = np.full(n_groups, -np.inf)
    np.minimum.at(vmin, group, values)
    np.maximum.at(vmax, group, values)
    return cnt, mean, sd, vmin, vmax


def fit_leaf_densities(
    forest: Forest,
    leaves: Optional[LeafSet],
    real: Dataset,
    smoothing: float = 0.0,
    sigma_floor: float = SIGMA_REL_FLOOR,
) -> DensityModel:
    """Fit the per-leaf, per-feature densities from each leaf's real rows.

    Numeric features use the sample mean and SD (ddof=1) of the leaf's
    observed values as the parameters of a normal truncated to the leaf
    interval. The SD is floored at ``max(1e-9, sigma_floor * column SD)``,
    which is also used when a leaf has fewer than two distinct values. Small
    floors let leaves holding one or two rows dominate conditional weights,
    so the default is a tenth of the column SD. A feature with
    no observed value in a leaf is fitted on the whole column's observed
    values inside the leaf interval (or the whole column if fewer than two
    fall inside). Categorical features get label frequencies over the leaf's
    allowed labels with additive ``smoothing``.
    """
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    if sigma_floor < 0:
        raise ValueError("sigma_floor must be >= 0")
    if real.schema != forest.schema:
        raise SchemaError("data schema differs from the forest's")
    if leaves is None:
        leaves = extract_leaves(forest, real)
    keep = np.flatnonzero(leaves.weight > 0)
    L = keep.size
    p = real.p
    X = real.values
    is_cat = real.is_categorical

    counts = forest.leaf_n_real[keep]
    starts = forest.leaf_rows_ptr[keep]
    group = np.repeat(np.arange(L), counts)
    rows = forest.leaf_rows[np.repeat(starts, counts) + _ranges(counts)]

    lo = leaves.lo[keep]
    hi = leaves.hi[keep]
    allowed = leaves.allowed[keep]
    na_only = leaves.na_only[keep]
    mu = np.zeros((L, p))
    sigma = np.ones((L, p))
    raw_mean = np.zeros((L, p))
    col_min = np.full(p, np.nan)
    col_max = np.full(p, np.nan)
    col_mean = np.full(p, np.nan)

    cat_cols = np.flatnonzero(is_cat)
    cat_slot = np.full(p, -1, dtype=np.int64)
    cat_slot[cat_cols] = np.arange(cat_cols.size)
    k_max = max([len(real.schema[j].categories) for j in cat_cols] + [1])
    cat_prob = np.zeros((L, cat_cols.size, k_max))
    col_freq = np.zeros((p, k_max))

    for j in range(p):
        col = X[:, j]
        col_obs = col[~np.isnan(col)]
        v = col[rows]
        obs = ~np.isnan(v)
        if is_cat[j]:
            k = len(real.schema[j].categories)
            cf = np.bincount(col_obs.astype(np.int64), minlength=k).astype(np.float64)
            if cf.sum() > 0:
                col_freq[j, :k] = cf / cf.sum()
                col_mean[j] = float(np.argmax(cf))
            bits = (allowed[:, j][:, None] >> np.arange(k, dtype=np.uint64)) & np.uint64(1)
            allow = bits.astype(bool)
            cnt = np.bincount(group[obs] * k + v[obs].astype(np.int64), minlength=L * k)
            cnt = cnt.reshape(L, k).astype(np.float64)
            w = (cnt + smoothing) * allow
            tot = w.sum(axis=1)
            empty = tot <= 0
            if empty.any():
                # no observed label in the leaf: column frequencies on the allowed labels
                w[empty] = cf[None, :] * allow[empty]
                tot = w.sum(axis=1)
                still = tot <= 0
                w[still] = allow[still].astype(np.float64)
                tot = w.sum(axis=1)
                still = tot <= 0
                w[still] = 1.0
                tot = w.sum(axis=1)
            cat_prob[:, cat_slot[j], :k] = w / tot[:, None]
            continue

        if col_obs.size:
            col_min[j] = col_obs.min()
            col_max[j] = col_obs.max()
            col_mean[j] = col_obs.mean()
        col_sd = float(col_obs.std(ddof=1)) if col_obs.size > 1 else 0.0
        floor = max(SIGMA_ABS_FLOOR, sigma_floor * col_sd)
        cnt, m, sd, vmin, vmax = _group_stats(v[obs], group[obs], L)
        few = ~(vmax > vmin)
        sd = np.where(few | ~np.isfinite(sd), floor, np.maximum(sd, floor))
        none = cnt == 0
        if none.any():
            fm, fsd = _interval_fallback(col_obs, lo[none, j], hi[none, j], floor)
            m = m.copy()
            m[none] = fm
            sd[none] = fsd
        mu[:, j] = m
        sigma[:, j] = sd
        raw_mean[:, j] = m

    with np.errstate(invalid="ignore"):
        a = (lo - mu) / sigma
        b = (hi - mu) / sigma
    lz = truncnorm.log_mass(a, b)
    uniform = (lz < np.log(truncnorm.MIN_MASS)) & np.isfinite(lo) & np.isfinite(hi)
    uniform[:, is_cat] = False
    log_norm = np.log(sigma) + 0.5 * np.log(2 * np.pi) + lz
    tmean = truncnorm.mean(mu, sigma, lo, hi)
    tmean[:, is_cat] = 0.0
    log_norm[:, is_cat] = 0.0
    if uniform.any():
        logger.debug("%d leaf densities fell back to uniform", int(uniform.sum()))
    return DensityModel(
        forest=forest,
        leaf_id=keep,
        weight=leaves.weight[keep],
        lo=lo,
        hi=hi,
        allowed=allowed,
        na_only=na_only,
        mu=mu,
        sigma=sigma,
        raw_mean=raw_mean,
        uniform=uniform,
        log_norm=log_norm,
        trunc_mean=tmean,
        cat_prob=cat_prob,
        cat_slot=cat_slot,
        col_min=col_min,
        col_max=col_max,
        col_mean=col_mean,
        col_freq=col_freq,
        smoothing=float(smoothing),
    )


def _ranges(counts: np.ndarray) -> np.ndarray:
    """Concatenation of arange(c) for each c in counts."""
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    ends = np.cumsum(counts)
    out = np.arange(total) - np.repeat(ends - counts, counts)
    return out.astype(np.int64)


def _interval_fallback(col_obs, lo, hi, floor):
    """Mean and SD of the column's observed values inside each (lo, hi]."""
    srt = np.sort(col_obs)
    c1 = np.concatenate([[0.0], np.cumsum(srt)])
    c2 = np.concatenate([[0.0], np.cumsum(srt * srt)])
    i0 = np.searchsorted(srt, lo, side="right")
    i1 = np.searchsorted(srt, hi, side="right")
    k = (i1 - i0).astype(np.float64)
    if srt.size:
        gm = srt.mean()
        gsd = srt.std(ddof=1) if srt.size > 1 else floor
    else:
        gm, gsd = 0.0, 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        m = (c1[i1] - c1[i0]) / k
        var = (c2[i1] - c2[i0] - k * m * m) / (k - 1)
    ok = k >= 2
    m = np.where(ok, m, gm)
    sd = np.where(ok, np.sqrt(np.maximum(var, 0.0)), gsd)
    sd = np.maximum(np.nan_to_num(sd, nan=floor), floor)
    return m, sd


# -- queries ----------------------------------------------------------------------


def _kernel_args(model: DensityModel):
    f = model.forest
    return (
        f.is_categorical, f.roots, f.feature, f.threshold, f.missing_left, f.left, f.right,
        f.cat_left, f.cat_right, model.node_density, np.log(model.weight), model.lo,
        model.hi, model.na_only, model.uniform, model.log_norm, model.mu, model.sigma,
        model.cat_logp, model.cat_slot,
    )


def candidates(model: DensityModel, values: np.ndarray, args=None):
    """(ptr, leaf, logw) for each row: leaves consistent with its observed
    cells and log(w_l) plus the observed cells' log densities."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[None, :]
    if args is None:
        args = _kernel_args(model)
    return candidate_leaves(values, *args)


def log_density(model: DensityModel, x) -> float:
    """log of the mixture density at a fully observed row; -inf outside the
    support of every leaf."""
    return float(log_density_rows(model, np.asarray(x, dtype=np.float64)[None, :])[0])


def log_density_rows(model: DensityModel, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if np.isnan(values).any():
        raise ValueError("log_density needs fully observed rows")
    ptr, _, logw = candidates(model, values)
    return segment_logsumexp(ptr, logw)


def segment_logsumexp(ptr: np.ndarray, logw: np.ndarray) -> np.ndarray:
    n = ptr.shape[0] - 1
    out = np.full(n, -np.inf)
    sizes = np.diff(ptr)
    nz = sizes > 0
    if logw.size == 0:
        return out
    idx = ptr[:-1][nz]
    row = np.repeat(np.arange(n), sizes)
    mx = np.full(n, -np.inf)
    mx[nz] = np.maximum.reduceat(logw, idx)
    s = np.zeros(n)
    s[nz] = np.add.reduceat(np.exp(logw - mx[row]), idx)
    out[nz] = mx[nz] + np.log(s[nz])
    return out


def draw_features(model: DensityModel, leaves: np.ndarray, cols: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Values for (leaf, column) pairs by inverse CDF at uniforms ``u``."""
    out = np.empty(leaves.shape[0])
    is_cat = model.is_categorical[cols]
    num = ~is_cat
    if num.any():
        d, j = leaves[num], cols[num]
        out[num] = truncnorm.ppf(u[num], model.mu[d, j], model.sigma[d, j],
                                 model.lo[d, j], model.hi[d, j])
    if is_cat.any():
        d, j = leaves[is_cat], cols[is_cat]
        probs = model.cat_prob[d, model.cat_slot[j], :]
        cum = np.cumsum(probs, axis=1)
        k = (cum < (u[is_cat] * cum[:, -1])[:, None]).sum(axis=1)
        out[is_cat] = np.minimum(k, probs.shape[1] - 1)
    return out


def sample_unconditional(model: DensityModel, count: int, rng=None) -> Dataset:
    """Draw ``count`` rows: a leaf by weight, then each feature from the leaf."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = as_generator(rng)
    w = model.weight / model.weight.sum()
    leaf = rng.choice(model.n_leaves, size=count, p=w)
    p = model.p
    u = rng.random((count, p))
    leaves = np.repeat(leaf, p)
    cols = np.tile(np.arange(p), count)
    vals = draw_features(model, leaves, cols, u.ravel()).reshape(count, p)
    return Dataset(model.schema, vals)

"""Conditional imputation from a fitted ARF model.

For a row with observed cells C, every leaf's weight is rescaled by the
leaf's density of the observed values and renormalized; leaves whose region
excludes an observed value get weight zero. Missing cells are then filled
either by sampling (draw one leaf by adjusted weight, then every missing
feature from that leaf) or by the adjusted-weight average of the leaves'
means (numeric) and the weighted most likely label (categorical).

Randomness is keyed by (row, imputation, feature) through a counter-based
hash, so the output does not depend on chunking or thread count.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ._rng import as_generator, counter_uniforms, derive_seed, draw_key
from .density import (
    SIGMA_REL_FLOOR,
    DensityModel,
    _kernel_args,
    candidates,
    draw_features,
    segment_logsumexp,
)
from .forest import ForestParams, _resolve_threads
from .model import ArfModel, fit_arf
from .tabular import Dataset, DataError

logger = logging.getLogger(__name__)

SINGLE_EXPECTATION = "expectation"
SINGLE_SAMPLE = "sample"
MULTIPLE = "multiple"
MODES = (SINGLE_EXPECTATION, SINGLE_SAMPLE, MULTIPLE)

TRUNCATED_MEAN = "truncated"
RAW_LEAF_MEAN = "raw"

_CHUNK = 256


class FallbackSignal(Exception):
    """No leaf is consistent with a row's observed values."""


@dataclass(frozen=True)
class ImputationConfig:
    mode: str = SINGLE_EXPECTATION
    m: int = 20
    n_trees: int = 100
    min_node_size: int = 10
    mtry: Optional[int] = None
    delta: float = 0.0
    max_iters: int = 10
    smoothing: float = 0.0
    sigma_floor: float = SIGMA_REL_FLOOR
    mean: str = TRUNCATED_MEAN
    seed: Optional[int] = None
    threads: Optional[int] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.mean not in (TRUNCATED_MEAN, RAW_LEAF_MEAN):
            raise ValueError(f"mean must be 'truncated' or 'raw', got {self.mean!r}")

    @property
    def n_imputations(self) -> int:
        return self.m if self.mode == MULTIPLE else 1

    def forest_params(self) -> ForestParams:
        return ForestParams(self.n_trees, self.min_node_size, self.mtry)


@dataclass
class ImputationTask:
    row: int
    observed: np.ndarray
    missing: np.ndarray
    values: np.ndarray

    @classmethod
    def from_values(cls, values, row: int = 0) -> "ImputationTask":
        values = np.asarray(values, dtype=np.float64)
        miss = np.isnan(values)
        return cls(row, np.flatnonzero(~miss), np.flatnonzero(miss), values)


@dataclass
class AdjustedWeights:
    leaf: np.ndarray
    weight: np.ndarray
    log_normalizer: float


@dataclass
class ImputedSet:
    datasets: list
    config: ImputationConfig
    fingerprint: str = ""
    report: Optional[object] = None
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.datasets)

    def __getitem__(self, k: int) -> Dataset:
        return self.datasets[k]


def _as_values(model: DensityModel, row) -> np.ndarray:
    if isinstance(row, ImputationTask):
        return row.values
    if isinstance(row, np.ndarray) and row.dtype.kind == "f":
        return row
    return Dataset.from_rows(model.schema, [list(row)]).values[0]


def adjusted_weights(model: DensityModel, task) -> AdjustedWeights:
    """Leaf weights conditioned on the observed cells of one row.

    Raises :class:`FallbackSignal` when no leaf is consistent with them.
    """
    x = _as_values(model, task)
    ptr, leaf, logw = candidates(model, x)
    if leaf.size == 0:
        raise FallbackSignal("no leaf matches the observed values")
    norm = float(segment_logsumexp(ptr, logw)[0])
    return AdjustedWeights(leaf, np.exp(logw - norm), norm)


class _Conditioner:
    """Adjusted weights for many rows at once, in CSR layout."""

    def __init__(self, model: DensityModel, values: np.ndarray, threads: Optional[int] = None):
        self.model = model
        args = _kernel_args(model)
        n = values.shape[0]
        chunks = [values[s:s + _CHUNK] for s in range(0, n, _CHUNK)]
        run = lambda v: candidates(model, v, args)  # noqa: E731
        n_threads = _resolve_threads(threads)
        if n_threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(n_threads) as pool:
                parts = list(pool.map(run, chunks))
        else:
            parts = [run(c) for c in chunks]
        ptrs, leaves, logws = [np.zeros(1, dtype=np.int64)], [], []
        offset = 0
        for ptr, leaf, logw in parts:
            ptrs.append(ptr[1:] + offset)
            offset += leaf.size
            leaves.append(leaf)
            logws.append(logw)
        self.ptr = np.concatenate(ptrs)
        self.leaf = np.concatenate(leaves) if leaves else np.zeros(0, dtype=np.int64)
        logw = np.concatenate(logws) if logws else np.zeros(0)
        self.log_norm = segment_logsumexp(self.ptr, logw)
        sizes = np.diff(self.ptr)
        self.row_of = np.repeat(np.arange(n), sizes)
        self.weight = np.exp(logw - self.log_norm[self.row_of])
        self.fallback = sizes == 0
        self._cum = np.cumsum(self.weight)

    def draw_leaves(self, u: np.ndarray) -> np.ndarray:
        """One leaf per row by inverse CDF of the adjusted weights (-1 on fallback)."""
        start = self.ptr[:-1]
        end = self.ptr[1:]
        cum0 = np.concatenate([[0.0], self._cum])
        base = cum0[start]
        total = cum0[end] - base
        idx = np.searchsorted(self._cum, base + u * total, side="right")
        idx = np.clip(idx, start, np.maximum(end - 1, start))
        out = np.full(u.shape[0], -1, dtype=np.int64)
        ok = ~self.fallback
        out[ok] = self.leaf[idx[ok]]
        return out

    def expectation(self, j: int, mean_kind: str) -> np.ndarray:
        model = self.model
        n = self.ptr.shape[0] - 1
        out = np.full(n, np.nan)
        ok = ~self.fallback
        if not ok.any():
            return out
        idx = self.ptr[:-1][ok]
        if model.is_categorical[j]:
            probs = model.cat_prob[self.leaf, model.cat_slot[j], :] * self.weight[:, None]
            score = np.add.reduceat(probs, idx, axis=0)
            out[ok] = np.argmax(score, axis=1)
        else:
            means = model.trunc_mean if mean_kind == TRUNCATED_MEAN else model.raw_mean
            out[ok] = np.add.reduceat(self.weight * means[self.leaf, j], idx)
        return out


def _fallback_draw(model: DensityModel, j: int, u: np.ndarray) -> np.ndarray:
    if model.is_categorical[j]:
        freq = model.col_freq[j]
        if freq.sum() <= 0:
            k = len(model.schema[j].categories)
            freq = np.zeros_like(freq)
            freq[:k] = 1.0 / k
        cum = np.cumsum(freq)
        return np.minimum(np.searchsorted(cum, u * cum[-1], side="right"), np.flatnonzero(freq > 0).max())
    lo, hi = model.col_min[j], model.col_max[j]
    if np.isnan(lo):
        return np.zeros_like(u)
    return lo + u * (hi - lo)


def _fallback_point(model: DensityModel, j: int) -> float:
    v = model.col_mean[j]
    return 0.0 if np.isnan(v) else float(v)


def impute_row_sample(model: DensityModel, task, rng=None) -> np.ndarray:
    """One conditional draw for the missing cells of a row (encoded floats)."""
    x = np.array(_as_values(model, task), dtype=np.float64)
    key = draw_key(as_generator(rng))
    return _sample_rows(model, _Conditioner(model, x[None, :], threads=1), x[None, :],
                        np.zeros(1, dtype=np.int64), key, 0)[0]


def impute_row_expectation(model: DensityModel, task, mean: str = TRUNCATED_MEAN) -> np.ndarray:
    """Adjusted-weight mean (numeric) or weighted modal label (categorical)."""
    x = np.array(_as_values(model, task), dtype=np.float64)
    return _expect_rows(model, _Conditioner(model, x[None, :], threads=1), x[None, :], mean)[0]


def _sample_rows(model, cond, values, row_ids, key, k):
    out = np.array(values)
    if out.shape[0] == 0:
        return out
    u_leaf = counter_uniforms(key, row_ids, k, 0)
    leaf = cond.draw_leaves(u_leaf)
    miss_r, miss_c = np.nonzero(np.isnan(values))
    u = counter_uniforms(key, row_ids[miss_r], k, miss_c + 1)
    lr = leaf[miss_r]
    ok = lr >= 0
    if ok.any():
        out[miss_r[ok], miss_c[ok]] = draw_features(model, lr[ok], miss_c[ok], u[ok])
    if (~ok).any():
        for j in np.unique(miss_c[~ok]):
            sel = ~ok & (miss_c == j)
            out[miss_r[sel], j] = _fallback_draw(model, int(j), u[sel])
    return out


def _expect_rows(model, cond, values, mean_kind):
    out = np.array(values)
    miss = np.isnan(values)
    for j in np.flatnonzero(miss.any(axis=0)):
        rows = miss[:, j]
        est = cond.expectation(int(j), mean_kind)
        est = np.where(np.isnan(est), _fallback_point(model, int(j)), est)
        out[rows, j] = est[rows]
    return out


def impute_with_model(
    model: ArfModel,
    data: Dataset,
    mode: str = SINGLE_EXPECTATION,
    m: int = 1,
    key: int = 0,
    mean: str = TRUNCATED_MEAN,
    threads: Optional[int] = None,
) -> list:
    """Complete ``data`` with an already fitted model; returns a list of datasets."""
    if data.schema != model.schema:
        raise DataError("data schema differs from the model's")
    values = data.values
    incomplete = np.flatnonzero(np.isnan(values).any(axis=1))
    n_out = m if mode == MULTIPLE else 1
    if incomplete.size == 0:
        return [data for _ in range(n_out)]
    sub = values[incomplete]
    cond = _Conditioner(model.density, sub, threads=threads)
    n_fb = int(cond.fallback.sum())
    if n_fb:
        logger.info("%d rows had no matching leaf; imputed from column ranges", n_fb)
    outs = []
    for k in range(n_out):
        if mode == SINGLE_EXPECTATION:
            filled = _expect_rows(model.density, cond, sub, mean)
        else:
            filled = _sample_rows(model.density, cond, sub, incomplete, key, k)
        full = np.array(values)
        full[incomplete] = filled
        outs.append(data.with_values(full))
    return outs


def impute_dataset(data: Dataset, cfg: ImputationConfig = ImputationConfig(), rng=None) -> ImputedSet:
    """Fit the ARF model once on ``data`` and complete every incomplete row.

    ``expectation`` and ``sample`` modes return one dataset; ``multiple``
    returns ``cfg.m`` datasets, each with a fresh conditional draw per row.
    Observed cells are copied unchanged into every output.
    """
    if data.n < 2:
        raise DataError("imputation needs at least 2 rows")
    if rng is None:
        rng = cfg.seed
    g = as_generator(rng)
    fit_key = draw_key(g)
    sample_key = draw_key(g)
    n_out = cfg.n_imputations
    if not data.has_missing():
        return ImputedSet([data for _ in range(n_out)], cfg, "", None,
                          {"seed": cfg.seed, "complete_input": True})
    empty = np.isnan(data.values).all(axis=0)
    if empty.any():
        names = [data.names[j] for j in np.flatnonzero(empty)]
        warnings.warn(f"columns with no observed value are imputed by fallback: {names}",
                      stacklevel=2)
    model = fit_arf(data, cfg.forest_params(), delta=cfg.delta, max_iters=cfg.max_iters,
                    smoothing=cfg.smoothing, rng=fit_key, threads=cfg.threads,
                    sigma_floor=cfg.sigma_floor)
    outs = impute_with_model(model, data, cfg.mode, cfg.m, sample_key, cfg.mean, cfg.threads)
    fp = model.fingerprint()
    prov = {
        "seed": cfg.seed,
        "model_fingerprint": fp,
        "arf_iterations": model.report.iterations,
        "arf_converged": model.report.converged,
        "arf_oob_accuracy": model.report.accuracy[-1],
        **{f"config.{k}": v for k, v in asdict(cfg).items()},
    }
    return ImputedSet(outs, cfg, fp, model.report, prov)


def impute(data: Dataset, m: Optional[int] = None, seed=None, **kwargs):
    """Convenience entry point: a single completed dataset by default, or a
    list of ``m`` conditional draws."""
    if m is None:
        cfg = ImputationConfig(mode=SINGLE_EXPECTATION, seed=seed if not isinstance(seed, np.random.Generator) else None, **kwargs)
        return impute_dataset(data, cfg, rng=seed)[0]
    cfg = ImputationConfig(mode=MULTIPLE, m=m, seed=seed if not isinstance(seed, np.random.Generator) else None, **kwargs)
    return impute_dataset(data, cfg, rng=seed).datasets

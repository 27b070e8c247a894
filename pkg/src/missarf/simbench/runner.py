"""Replicate-grid runner for the simulation study.

Each replicate of a grid cell simulates a training and a test set, amputes
both independently and hands the same amputed data to every method. Two
analyses are run:

* ``single``: one completed dataset per method, scored by NRMSE on the
  training set and by the Brier score of a logistic model fitted on the
  completed training set and evaluated on the completed test set.
* ``multiple``: m completed training sets, one logistic fit each, pooled;
  the pooled intervals are checked against the true coefficients.

Every random stream is derived from the master seed and the cell's
descriptors, so output does not depend on scheduling or grid order.
"""

from __future__ import annotations

import csv
import logging
import math
import re
import time
import zlib
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .._rng import derive_generator, derive_seed
from ..forest import _resolve_threads
from ..impute import MULTIPLE, SINGLE_EXPECTATION, ImputationConfig, impute_with_model
from ..model import fit_arf
from ..tabular import Dataset, StandardizationParams, format_number
from .amputation import MECHANISMS, AmputeSpec, ampute
from .baselines import baseline_median, baseline_random, mean_over_imputations
from .metrics import brier, fit_logistic, nrmse, pool_rubin
from .simulate import EFFECTS, MARGINALS, SimSpec, design, simulate_features, simulate_outcome, true_beta

logger = logging.getLogger(__name__)

METHODS = ("missarf", "median", "random")
SETTINGS = ("single", "multiple")
RESULT_COLUMNS = ("n", "p", "marginal", "effect", "mechanism", "proportion", "method", "m",
                  "replicate", "metric", "feature", "value", "status", "wall_ms")

_METHOD_ID = {"missarf": 0, "median": 1, "random": 2}


class ConfigError(ValueError):
    pass


@dataclass
class BenchmarkConfig:
    """A grid of simulation designs times amputation designs, K replicates each.

    The ``n``, ``p``, ``marginal``, ``effect``, ``rho``, ``mechanism`` and
    ``proportion`` lists span the grid. ``imputation`` holds the MissARF
    settings (its ``m`` is the number of imputations in the multiple analysis).
    """

    n: list = field(default_factory=lambda: [1000])
    p: list = field(default_factory=lambda: [4])
    marginal: list = field(default_factory=lambda: ["normal"])
    effect: list = field(default_factory=lambda: ["linear"])
    rho: float = 0.5
    mechanism: list = field(default_factory=lambda: ["MCAR"])
    proportion: list = field(default_factory=lambda: [0.2])
    methods: list = field(default_factory=lambda: list(METHODS))
    settings: list = field(default_factory=lambda: list(SETTINGS))
    replicates: int = 10
    seed: int = 0
    alpha: float = 0.05
    timing: bool = True
    include_outcome: bool = False
    threads: Optional[int] = None
    imputation: ImputationConfig = field(default_factory=ImputationConfig)

    def __post_init__(self):
        for name in ("n", "p", "marginal", "effect", "mechanism", "proportion", "methods", "settings"):
            v = getattr(self, name)
            if not isinstance(v, (list, tuple)):
                v = [v]
            if not v:
                raise ConfigError(f"{name} must not be empty")
            setattr(self, name, list(v))
        for v in self.marginal:
            if v not in MARGINALS:
                raise ConfigError(f"unknown marginal {v!r}")
        for v in self.effect:
            if v not in EFFECTS:
                raise ConfigError(f"unknown effect {v!r}")
        for v in self.mechanism:
            if v not in MECHANISMS:
                raise ConfigError(f"unknown mechanism {v!r}")
        for v in self.methods:
            if v not in METHODS:
                raise ConfigError(f"unknown method {v!r}; expected one of {METHODS}")
        for v in self.settings:
            if v not in SETTINGS:
                raise ConfigError(f"unknown setting {v!r}; expected one of {SETTINGS}")
        for q in self.proportion:
            if not 0 < q < 1:
                raise ConfigError(f"proportion {q} must lie strictly between 0 and 1")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if "multiple" in self.settings and self.imputation.m < 2:
            raise ConfigError("the multiple analysis needs imputation.m >= 2")

    def sim_cells(self) -> list:
        return [SimSpec(n, p, mg, ef, self.rho)
                for n in self.n for p in self.p for mg in self.marginal for ef in self.effect]

    def amp_cells(self) -> list:
        return [AmputeSpec(mech, q) for mech in self.mechanism for q in self.proportion]


@dataclass(frozen=True)
class ResultRow:
    n: int
    p: int
    marginal: str
    effect: str
    mechanism: str
    proportion: float
    method: str
    m: int
    replicate: int
    metric: str
    feature: Optional[int]
    value: float
    status: str = "ok"
    wall_ms: float = 0.0

    def sort_key(self):
        return (self.n, self.p, self.marginal, self.effect, self.mechanism, self.proportion,
                self.method, self.m, self.replicate, self.metric,
                -1 if self.feature is None else self.feature)

    def as_strings(self) -> list:
        out = []
        for f in RESULT_COLUMNS:
            v = getattr(self, f)
            if v is None:
                out.append("")
            elif isinstance(v, float):
                out.append("NA" if math.isnan(v) else format_number(v))
            else:
                out.append(str(v))
        return out


def _stable_key(*parts) -> int:
    return zlib.crc32("|".join(str(p) for p in parts).encode())


@dataclass
class _Replicate:
    sim: SimSpec
    amp: AmputeSpec
    rep: int


def _timer(enabled: bool):
    start = time.perf_counter()
    return lambda: (time.perf_counter() - start) * 1000.0 if enabled else 0.0


def run_replicate(cfg: BenchmarkConfig, task: _Replicate, inner_threads: Optional[int] = None) -> list:
    """All methods and analyses for one replicate of one grid cell."""
    sim, amp, rep = task.sim, task.amp, task.rep
    sim_key = _stable_key(sim.n, sim.p, sim.marginal, sim.effect, sim.rho)
    amp_key = _stable_key(amp.mechanism, amp.proportion)
    g_sim = derive_generator(cfg.seed, 0, sim_key, rep)
    g_amp = derive_generator(cfg.seed, 1, sim_key, amp_key, rep)

    train = simulate_features(sim, g_sim)
    y_train = simulate_outcome(train, sim.effect, g_sim)
    test = simulate_features(sim, g_sim)
    y_test = simulate_outcome(test, sim.effect, g_sim)
    train_na = ampute(train, amp, g_amp)
    test_na = ampute(test, amp, g_amp)
    params = StandardizationParams.from_data(train)
    beta = true_beta(sim.p)
    df_com = sim.n - (sim.p + 1)
    m = cfg.imputation.m

    def row(method, mm, metric, feature, value, status="ok", wall=0.0):
        return ResultRow(sim.n, sim.p, sim.marginal, sim.effect, amp.mechanism, amp.proportion,
                         method, mm, rep, metric, feature, float(value), status, float(wall))

    rows = []
    for method in cfg.methods:
        seed = derive_seed(cfg.seed, 2, sim_key, amp_key, _METHOD_ID[method], rep)
        want_multi = "multiple" in cfg.settings and method != "median"
        try:
            clock = _timer(cfg.timing)
            single_tr, single_te, multi = _impute_all(cfg, method, seed, train_na, test_na,
                                                      y_train, y_test, want_multi, inner_threads)
            wall = clock()
        except Exception as exc:  # recorded, never aborts the grid
            logger.warning("replicate %d method %s failed: %s", rep, method, exc)
            rows.append(row(method, 1, "error", None, np.nan, f"error: {exc}".replace("\n", " ")))
            continue

        if "single" in cfg.settings:
            rows.append(row(method, 1, "nrmse", None, nrmse(single_tr, train, params), wall=wall))
            fit = fit_logistic(design(single_tr.values, sim.effect), y_train)
            status = "ok" if fit.ok else "glm_nonconverged"
            b = brier(fit, design(single_te.values, sim.effect), y_test)
            rows.append(row(method, 1, "brier", None, b, status, wall))

        if want_multi:
            ests, vars_ = [], []
            status = "ok"
            for d in multi:
                fit = fit_logistic(design(d.values, sim.effect), y_train)
                if not fit.ok:
                    status = "glm_nonconverged"
                ests.append(fit.coef)
                vars_.append(np.diag(fit.cov))
            pooled = pool_rubin(ests, vars_, df_complete=df_com, alpha=cfg.alpha)
            rows.append(row(method, m, "intercept", 0, pooled[0].estimate, status, wall))
            for j, pe in enumerate(pooled[1:], start=1):
                covered = pe.lower < beta[j - 1] < pe.upper
                rows.append(row(method, m, "estimate", j, pe.estimate, status, wall))
                rows.append(row(method, m, "covered", j, float(covered), status, wall))
                rows.append(row(method, m, "ci_width", j, pe.width, status, wall))
                rows.append(row(method, m, "sq_error", j, (pe.estimate - beta[j - 1]) ** 2, status, wall))
    return rows


def _with_outcome(data: Dataset, y) -> Dataset:
    return Dataset.from_array(np.column_stack([data.values, y]), data.names + ["y"])


def _impute_all(cfg, method, seed, train_na, test_na, y_train, y_test, want_multi, threads):
    """(single train, single test, list of multiple train) for one method."""
    m = cfg.imputation.m
    single = "single" in cfg.settings
    if method == "median":
        return baseline_median(train_na), baseline_median(test_na), []
    if method == "random":
        g = derive_generator(seed)
        tr = baseline_random(train_na, 1, g)[0] if single else None
        te = baseline_random(test_na, 1, g)[0] if single else None
        multi = baseline_random(train_na, m, g).datasets if want_multi else []
        return tr, te, multi

    icfg = cfg.imputation
    params = icfg.forest_params()
    p = train_na.p

    def run(data, y, key, modes):
        src = _with_outcome(data, y) if cfg.include_outcome else data
        if not src.has_missing():
            return {mode: [data] * (m if mode == MULTIPLE else 1) for mode in modes}
        model = fit_arf(src, params, delta=icfg.delta, max_iters=icfg.max_iters,
                        smoothing=icfg.smoothing, rng=derive_seed(key, 0), threads=threads,
                        sigma_floor=icfg.sigma_floor)
        out = {}
        for mode in modes:
            ds = impute_with_model(model, src, mode, m, derive_seed(key, 1), icfg.mean, threads)
            if cfg.include_outcome:
                ds = [Dataset(data.schema, d.values[:, :p]) for d in ds]
            out[mode] = ds
        return out

    modes = ([SINGLE_EXPECTATION] if single else []) + ([MULTIPLE] if want_multi else [])
    tr = run(train_na, y_train, derive_seed(seed, 0), modes)
    te = run(test_na, y_test, derive_seed(seed, 1), [SINGLE_EXPECTATION]) if single else {}
    return (tr.get(SINGLE_EXPECTATION, [None])[0], te.get(SINGLE_EXPECTATION, [None])[0],
            tr.get(MULTIPLE, []))


def run_benchmark(cfg: BenchmarkConfig, progress: Optional[Callable[[str], None]] = None) -> list:
    """Run the whole grid; returns result rows sorted by their descriptors."""
    tasks = [_Replicate(s, a, r) for s in cfg.sim_cells() for a in cfg.amp_cells()
             for r in range(cfg.replicates)]
    n_threads = _resolve_threads(cfg.threads)
    remaining = {}
    for t in tasks:
        remaining[(t.sim, t.amp)] = remaining.get((t.sim, t.amp), 0) + 1

    def done(t, rows):
        key = (t.sim, t.amp)
        remaining[key] -= 1
        if remaining[key] == 0 and progress is not None:
            ok = sum(r.status == "ok" for r in rows)
            progress(f"cell n={t.sim.n} p={t.sim.p} {t.sim.marginal}/{t.sim.effect} "
                     f"{t.amp.mechanism} q={format_number(t.amp.proportion)} done ({ok} ok rows in last replicate)")

    rows = []
    if n_threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            futures = {pool.submit(run_replicate, cfg, t, 1): t for t in tasks}
            for fut in as_completed(futures):
                r = fut.result()
                rows.extend(r)
                done(futures[fut], r)
    else:
        for t in tasks:
            r = run_replicate(cfg, t, cfg.threads)
            rows.extend(r)
            done(t, r)
    rows.sort(key=ResultRow.sort_key)
    return rows


def write_results(rows: Sequence[ResultRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in sorted(rows, key=ResultRow.sort_key):
            w.writerow(r.as_strings())


def read_results(path) -> list:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out.append(ResultRow(
                int(rec["n"]), int(rec["p"]), rec["marginal"], rec["effect"], rec["mechanism"],
                float(rec["proportion"]), rec["method"], int(rec["m"]), int(rec["replicate"]),
                rec["metric"], int(rec["feature"]) if rec["feature"] else None,
                float("nan") if rec["value"] == "NA" else float(rec["value"]),
                rec["status"], float(rec["wall_ms"]),
            ))
    return out


def summarize(rows: Sequence[ResultRow]) -> list:
    """Mean, SD and count of each metric per cell, method and feature.

    For ``covered`` the mean is the coverage rate; the square root of the
    mean of ``sq_error`` is the coefficient RMSE.
    """
    groups = {}
    for r in rows:
        if r.status.startswith("error") or math.isnan(r.value):
            continue
        key = r.sort_key()[:8] + (r.metric, r.feature)
        groups.setdefault(key, []).append(r.value)
    out = []
    for key in sorted(groups, key=lambda k: k[:9] + (-1 if k[9] is None else k[9],)):
        v = np.array(groups[key])
        out.append(dict(zip(("n", "p", "marginal", "effect", "mechanism", "proportion", "method", "m",
                             "metric", "feature"), key),
                        mean=float(v.mean()), sd=float(v.std(ddof=1)) if v.size > 1 else 0.0,
                        count=int(v.size)))
    return out


# -- config files -----------------------------------------------------------------

_TOP_KEYS = {f.name for f in fields(BenchmarkConfig)} - {"imputation"}
_IMPUTATION_KEYS = {f.name for f in fields(ImputationConfig)}
_SECTIONS = {"sim": {"n", "p", "marginal", "effect", "rho"},
             "ampute": {"mechanism", "proportion"},
             "benchmark": _TOP_KEYS - {"n", "p", "marginal", "effect", "rho", "mechanism", "proportion"},
             "imputation": _IMPUTATION_KEYS}


def _line_of(text: str, key: str) -> int:
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith(key) and s[len(key):].lstrip().startswith("="):
            return i
        if s.startswith("[") and s.strip("[] ") == key:
            return i
    return 0


def _culprit(message: str, items: dict) -> str:
    """Best guess at the key an error message is about."""
    for k, v in items.items():
        vals = v if isinstance(v, list) else [v]
        if any(isinstance(x, str) and repr(x) in message for x in vals):
            return k
    for k in items:
        if re.search(rf"\b{re.escape(k)}\b", message):
            return k
    return ""


def parse_config(text: str, source: str = "<config>") -> BenchmarkConfig:
    """Parse a TOML benchmark description.

    Sections ``[sim]``, ``[ampute]``, ``[benchmark]`` and ``[imputation]``
    carry the fields of the corresponding dataclasses; grid fields accept a
    scalar or a list. Errors name the offending line.
    """
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    top, imp = {}, {}
    for section, body in doc.items():
        if section not in _SECTIONS or not isinstance(body, dict):
            raise ConfigError(f"{source}:{_line_of(text, section)}: unknown section [{section}]")
        for k, v in body.items():
            if k not in _SECTIONS[section]:
                raise ConfigError(f"{source}:{_line_of(text, k)}: unknown key {k!r} in [{section}]")
            (imp if section == "imputation" else top)[k] = v
    try:
        icfg = ImputationConfig(**imp)
        return BenchmarkConfig(**top, imputation=icfg)
    except (TypeError, ValueError) as exc:
        line = _line_of(text, _culprit(str(exc), {**top, **imp}))
        if not line:
            raise ConfigError(f"{source}: {exc}") from exc
        raise ConfigError(f"{source}:{line}: {exc}") from exc


def load_config(path) -> BenchmarkConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(text, str(path))


# -- scoring external imputations ------------------------------------------------------


def evaluate(truth: Dataset, imputed: Sequence[Dataset], outcome=None, effect: str = "linear",
             beta=None, alpha: float = 0.05) -> list:
    """Score completed datasets produced by any imputer against the truth.

    Returns ``(metric, feature, value)`` triples: the NRMSE of the mean over
    the imputations and, when an outcome is given and at least two
    imputations exist, the pooled coefficients and intervals (with coverage
    when the true coefficients are given).
    """
    if not imputed:
        raise ValueError("need at least one imputed dataset")
    single = mean_over_imputations(imputed) if len(imputed) > 1 else imputed[0]
    out = [("nrmse", None, nrmse(single, truth))]
    if outcome is not None and len(imputed) >= 2:
        ests, vars_ = [], []
        for d in imputed:
            fit = fit_logistic(design(d.values, effect), outcome)
            ests.append(fit.coef)
            vars_.append(np.diag(fit.cov))
        pooled = pool_rubin(ests, vars_, df_complete=truth.n - (truth.p + 1), alpha=alpha)
        for j, pe in enumerate(pooled):
            out += [("estimate", j, pe.estimate), ("lower", j, pe.lower),
                    ("upper", j, pe.upper), ("ci_width", j, pe.width)]
            if beta is not None and j > 0:
                out.append(("covered", j, float(pe.lower < beta[j - 1] < pe.upper)))
    return out

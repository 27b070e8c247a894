"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 internal error. Messages go to standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .density import SIGMA_REL_FLOOR, log_density_rows
from .forest import ForestParams
from .impute import MULTIPLE, SINGLE_EXPECTATION, SINGLE_SAMPLE, ImputationConfig, impute_with_model
from .model import FORMAT_VERSION, ModelFormatError, fit_arf, load_model, save_model
from .simbench.amputation import MECHANISMS, AmputeSpec, ampute
from .simbench.runner import ConfigError, evaluate, load_config, run_benchmark, summarize, write_results
from .simbench.simulate import EFFECTS, MARGINALS, SimSpec, simulate_features, simulate_outcome, true_beta
from .tabular import ColumnSchema, Dataset, DataError, SchemaError, categorical, read_csv, write_csv

logger = logging.getLogger("missarf")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

DEFAULTS = ImputationConfig()


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- helpers -------------------------------------------------------------------------


def _names(text):
    return [s.strip() for s in text.split(",") if s.strip()] if text else []


def _read(path, cats):
    hint = [categorical(name) for name in _names(cats)]
    return read_csv(path, hint)


def _split_columns(data: Dataset, exclude):
    """(kept data, excluded column indices) for pass-through columns."""
    drop = _names(exclude)
    idx = [data.column_index(c) for c in drop]
    keep = [j for j in range(data.p) if j not in idx]
    if not keep:
        raise CliError("every column is excluded", EXIT_CONFIG)
    sub = Dataset([data.schema[j] for j in keep], data.values[:, keep])
    return sub, keep, idx


def _merge(original: Dataset, part: Dataset, keep) -> Dataset:
    X = np.array(original.values)
    X[:, keep] = part.values
    schema = list(original.schema)
    for k, j in enumerate(keep):
        schema[j] = part.schema[k]
    return Dataset(schema, X)


def _write_kv(path: Path, items: dict) -> None:
    lines = [f"{k}={'' if v is None else v}" for k, v in items.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _forest_args(p):
    p.add_argument("--trees", type=int, default=DEFAULTS.n_trees, help="number of trees (default: %(default)s)")
    p.add_argument("--min-node-size", type=int, default=DEFAULTS.min_node_size,
                   help="minimum rows per leaf (default: %(default)s)")
    p.add_argument("--mtry", type=int, default=None, help="features tried per split (default: ceil(sqrt(p)))")
    p.add_argument("--delta", type=float, default=DEFAULTS.delta,
                   help="convergence tolerance on OOB accuracy above 0.5 (default: %(default)s)")
    p.add_argument("--max-iters", type=int, default=DEFAULTS.max_iters,
                   help="cap on adversarial refinement rounds (default: %(default)s)")
    p.add_argument("--smoothing", type=float, default=0.0,
                   help="additive smoothing of leaf label frequencies (default: %(default)s)")
    p.add_argument("--sigma-floor", type=float, default=SIGMA_REL_FLOOR,
                   help="minimum leaf SD as a fraction of the column SD (default: %(default)s)")
    p.add_argument("--categorical", default="", metavar="COLS",
                   help="comma-separated categorical column names (default: none)")


def _fit(args, data):
    params = ForestParams(args.trees, args.min_node_size, args.mtry)
    return fit_arf(data, params, delta=args.delta, max_iters=args.max_iters,
                   smoothing=args.smoothing, rng=args.seed, threads=args.threads,
                   sigma_floor=args.sigma_floor)


# -- subcommands ---------------------------------------------------------------------


def cmd_simulate(args):
    spec = SimSpec(args.n, args.p, args.marginal, args.effect, args.rho)
    g = np.random.default_rng(args.seed)
    x = simulate_features(spec, g)
    y = simulate_outcome(x, args.effect, g)
    out = Dataset.from_array(np.column_stack([x.values, y]), x.names + ["y"])
    write_csv(out, args.out)
    logger.info("wrote %d rows to %s (true coefficients %s)", out.n, args.out, true_beta(args.p).tolist())


def cmd_ampute(args):
    data = _read(args.input, args.categorical)
    sub, keep, _ = _split_columns(data, args.exclude)
    targets = None
    if args.targets:
        targets = [sub.column_index(c) for c in _names(args.targets)]
    spec = AmputeSpec(args.mechanism, args.proportion, targets)
    out = ampute(sub, spec, np.random.default_rng(args.seed))
    write_csv(_merge(data, out, keep), args.out)


def cmd_fit(args):
    data = _read(args.input, args.categorical)
    sub, _, _ = _split_columns(data, args.exclude)
    model = _fit(args, sub)
    save_model(model, args.out)
    r = model.report
    logger.info("model %s: %d iterations, converged=%s, OOB accuracy %s",
                args.out, r.iterations, r.converged, r.accuracy)


def _mode(args):
    if args.m is not None:
        if args.m < 1:
            raise CliError("--m must be >= 1", EXIT_CONFIG)
        return MULTIPLE, args.m
    if args.single:
        return SINGLE_SAMPLE, 1
    return SINGLE_EXPECTATION, 1


def cmd_impute(args):
    data = _read(args.input, args.categorical)
    sub, keep, _ = _split_columns(data, args.exclude)
    mode, m = _mode(args)
    if args.model:
        model = load_model(args.model)
        if model.schema != sub.schema:
            labels_only = [ColumnSchema(c.name, c.kind) for c in model.schema]
            if labels_only != [ColumnSchema(c.name, c.kind) for c in sub.schema]:
                raise DataError("input columns differ from the model's")
            sub = Dataset.from_rows(model.schema, sub.rows())
    else:
        if sub.n < 2:
            raise DataError("imputation needs at least 2 rows")
        model = _fit(args, sub) if sub.has_missing() else None
    key = int(np.random.default_rng(args.seed).integers(0, 2**63 - 1))
    if model is None:
        outs = [sub] * m
    else:
        outs = impute_with_model(model, sub, mode, m, key, args.mean, args.threads)
    prefix = Path(args.out)
    files = []
    if mode == MULTIPLE:
        for k, d in enumerate(outs, start=1):
            files.append(prefix.parent / f"{prefix.name}_{k}.csv")
            write_csv(_merge(data, d, keep), files[-1])
    else:
        files.append(prefix.parent / f"{prefix.name}.csv")
        write_csv(_merge(data, outs[0], keep), files[-1])
    prov = {
        "tool": f"missarf {__version__}",
        "input": args.input,
        "seed": args.seed,
        "mode": mode,
        "m": m,
        "trees": args.trees,
        "min_node_size": args.min_node_size,
        "mtry": args.mtry,
        "delta": args.delta,
        "max_iters": args.max_iters,
        "smoothing": args.smoothing,
        "sigma_floor": args.sigma_floor,
        "mean": args.mean,
        "model_file": args.model,
        "model_fingerprint": model.fingerprint() if model else "",
        "arf_iterations": model.report.iterations if model else 0,
        "arf_converged": model.report.converged if model else "",
        "outputs": ",".join(str(f) for f in files),
    }
    _write_kv(prefix.parent / f"{prefix.name}.provenance.txt", prov)


def cmd_logprob(args):
    model = load_model(args.model)
    data = read_csv(args.input, [c for c in model.schema if c.is_categorical])
    if [c.name for c in data.schema] != [c.name for c in model.schema]:
        raise DataError("input columns differ from the model's")
    data = Dataset.from_rows(model.schema, data.rows())
    if data.has_missing():
        i = int(np.flatnonzero(data.missing_mask.any(axis=1))[0])
        raise DataError(f"row {i + 1} has missing cells; log-density needs complete rows")
    values = log_density_rows(model.density, data.values)
    sys.stdout.write("".join(f"{v:.16e}\n" for v in values))
    if np.isneginf(values).any():
        logger.warning("some rows lie outside the support of every leaf (-inf)")


def cmd_benchmark(args):
    cfg = load_config(args.grid)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.replicates is not None:
        cfg.replicates = args.replicates
    rows = run_benchmark(cfg, progress=lambda msg: print(msg, file=sys.stderr, flush=True))
    write_results(rows, args.out)
    if args.summary:
        summ = summarize(rows)
        with open(args.summary, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(summ, indent=1) + "\n")
    if rows and all(r.status.startswith("error") for r in rows):
        raise CliError("every replicate failed", EXIT_INTERNAL)


def cmd_evaluate(args):
    truth = _read(args.truth, args.categorical)
    imputed = [_read(p, args.categorical) for p in args.imputed]
    outcome = None
    if args.outcome:
        j = truth.column_index(args.outcome)
        outcome = truth.values[:, j]
        keep = [k for k in range(truth.p) if k != j]
        truth = Dataset([truth.schema[k] for k in keep], truth.values[:, keep])
        imputed = [Dataset([d.schema[k] for k in keep], d.values[:, keep]) for d in imputed]
    beta = true_beta(truth.p) if args.true_beta else None
    res = evaluate(truth, imputed, outcome, args.effect, beta, args.alpha)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write("metric,feature,value\n")
        for metric, feature, value in res:
            out.write(f"{metric},{'' if feature is None else feature},{value!r}\n")
    finally:
        if args.out:
            out.close()


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="missarf",
        description="Adversarial random forests for density estimation and imputation.",
    )
    parser.add_argument("--version", action="version",
                        version=f"missarf {__version__} (model format {FORMAT_VERSION})")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master random seed (default: random)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: available CPUs; 1 = sequential)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more log output")
    common.add_argument("--config", default=None, metavar="TOML",
                        help="TOML file whose [<subcommand>] table sets flag defaults")
    common.add_argument("--print-config", action="store_true",
                        help="print the resolved settings to standard error")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", parents=[common], help="simulate copula features and a binary outcome")
    p.add_argument("--n", type=int, required=True, help="rows")
    p.add_argument("--p", type=int, required=True, help="features")
    p.add_argument("--marginal", choices=MARGINALS, default="normal", help="(default: %(default)s)")
    p.add_argument("--effect", choices=EFFECTS, default="linear", help="(default: %(default)s)")
    p.add_argument("--rho", type=float, default=0.5, help="Toeplitz correlation base (default: %(default)s)")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ampute", parents=[common], help="introduce missing values")
    p.add_argument("input", help="input CSV")
    p.add_argument("--mechanism", choices=MECHANISMS, default="MCAR", help="(default: %(default)s)")
    p.add_argument("--proportion", type=float, default=0.2, help="missing rate per target (default: %(default)s)")
    p.add_argument("--targets", default="", metavar="COLS",
                   help="columns to amputate (default: first half of the non-excluded columns)")
    p.add_argument("--exclude", default="", metavar="COLS", help="columns left untouched (e.g. the outcome)")
    p.add_argument("--categorical", default="", metavar="COLS", help="categorical column names")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_ampute)

    p = sub.add_parser("fit", parents=[common], help="fit an ARF model and save it")
    p.add_argument("input", help="input CSV")
    _forest_args(p)
    p.add_argument("--exclude", default="", metavar="COLS", help="columns not modelled")
    p.add_argument("--out", required=True, help="model file")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("impute", parents=[common], help="impute missing cells")
    p.add_argument("input", help="input CSV")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--expectation", action="store_true",
                      help="one dataset from conditional means and modes (the default)")
    mode.add_argument("--single", action="store_true", help="one dataset from a single conditional draw")
    mode.add_argument("--m", type=int, nargs="?", const=DEFAULTS.m, default=None, metavar="N",
                      help=f"multiple imputation with N draws (default N: {DEFAULTS.m})")
    p.add_argument("--model", default=None, help="use a saved model instead of fitting")
    p.add_argument("--mean", choices=("truncated", "raw"), default=DEFAULTS.mean,
                   help="leaf mean used by --expectation (default: %(default)s)")
    _forest_args(p)
    p.add_argument("--exclude", default="", metavar="COLS", help="columns passed through unchanged")
    p.add_argument("--out", required=True, help="output prefix: PREFIX.csv or PREFIX_1.csv .. PREFIX_m.csv")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("logprob", parents=[common], help="log-density of complete rows under a model")
    p.add_argument("model", help="model file")
    p.add_argument("input", help="input CSV")
    p.set_defaults(func=cmd_logprob)

    p = sub.add_parser("benchmark", parents=[common], help="run a simulation grid")
    p.add_argument("grid", metavar="CONFIG", help="TOML grid description")
    p.add_argument("--out", required=True, help="results CSV")
    p.add_argument("--summary", default=None, help="optional JSON summary per cell and metric")
    p.add_argument("--replicates", type=int, default=None, help="override the replicate count")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("evaluate", parents=[common], help="score imputed CSVs against the truth")
    p.add_argument("--truth", required=True, help="complete CSV")
    p.add_argument("--imputed", required=True, nargs="+", help="one or more imputed CSVs")
    p.add_argument("--outcome", default=None, help="binary outcome column for pooled inference")
    p.add_argument("--effect", choices=EFFECTS, default="linear", help="(default: %(default)s)")
    p.add_argument("--true-beta", action="store_true",
                   help="report coverage of the simulation's true coefficients")
    p.add_argument("--alpha", type=float, default=0.05, help="(default: %(default)s)")
    p.add_argument("--categorical", default="", metavar="COLS", help="categorical column names")
    p.add_argument("--out", default=None, help="output CSV (default: standard output)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _apply_config_file(parser, argv, args):
    """Re-parse with defaults taken from the config file's table for the subcommand."""
    path = Path(args.config)
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"{path}: {exc}", EXIT_CONFIG) from exc
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"{path}: {exc}", EXIT_CONFIG) from exc
    table = doc.get(args.command, {})
    if not isinstance(table, dict):
        raise CliError(f"{path}: [{args.command}] must be a table", EXIT_CONFIG)
    known = set(vars(args))
    values = {}
    for k, v in table.items():
        dest = k.replace("-", "_")
        if dest not in known or dest in ("func", "command", "config"):
            raise CliError(f"{path}: unknown setting {k!r} for {args.command}", EXIT_CONFIG)
        values[dest] = v
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    subparser.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.config:
            args = _apply_config_file(parser, argv, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.print_config:
        shown = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
        print(json.dumps(shown, default=str), file=sys.stderr)
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SchemaError, ModelFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover - last resort
        logger.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

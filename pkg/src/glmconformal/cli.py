"""Command-line entry points: fit, predict and simulate."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, field

import numpy as np

from .baselines import KernelConformal, ResidualConformal
from .engine import ConformalConfig
from .glm import DEFAULT_LINK, Dataset, FitError, ModelSpec, fit
from .parametric import BinPartition, ParametricConformal, default_bins
from .simulation import METHODS, make_setting, run_study

log = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2
_MISSING = {"", "na", "nan", "null", "none"}


class ConfigError(ValueError):
    pass


def fmt(v: float) -> str:
    return "%.10g" % v


@dataclass
class LoadedData:
    dataset: Dataset
    response: str
    predictors: list
    lo: np.ndarray
    hi: np.ndarray
    levels: dict = field(default_factory=dict)
    raw: list = field(default_factory=list)
    dropped: int = 0

    def scale(self, rows) -> np.ndarray:
        """Map raw predictor strings to the [0, 1] scale of the training data."""
        out = np.empty((len(rows), len(self.predictors)))
        for j, name in enumerate(self.predictors):
            col = [r[j] for r in rows]
            out[:, j] = _encode(col, name, self.levels.get(name))
        return (out - self.lo) / (self.hi - self.lo)


def _is_missing(v: str) -> bool:
    return v.strip().lower() in _MISSING


def _encode(values, name, levels=None) -> np.ndarray:
    try:
        if levels is None:
            return np.array([float(v) for v in values])
    except ValueError:
        raise ConfigError(f"column {name!r} is neither numeric nor a two-level factor") from None
    index = {lev: i for i, lev in enumerate(levels)}
    try:
        return np.array([float(index[v.strip()]) for v in values])
    except KeyError as exc:
        raise ConfigError(f"column {name!r}: unknown level {exc.args[0]!r}") from None


def _factor_levels(values, name):
    try:
        [float(v) for v in values]
        return None
    except ValueError:
        levels = sorted({v.strip() for v in values})
        if len(levels) != 2:
            raise ConfigError(f"column {name!r} is neither numeric nor a two-level factor") from None
        return levels


def load_csv(path, response: str, predictors, min_rows: int = 1) -> LoadedData:
    """Read a UTF-8 CSV; drop incomplete rows and min-max scale the predictors.

    Two-level string columns become 0/1 by lexicographic order of the levels.
    The response is left unscaled.
    """
    predictors = list(predictors)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in [response, *predictors] if c not in header]
        if missing:
            raise ConfigError(f"missing column(s) {missing} in {path}")
        rows = list(reader)
    cols = [response, *predictors]
    complete = [r for r in rows if not any(r[c] is None or _is_missing(r[c]) for c in cols)]
    dropped = len(rows) - len(complete)
    if len(complete) < min_rows:
        raise ConfigError(f"only {len(complete)} complete rows; need at least {min_rows}")
    try:
        y = np.array([float(r[response]) for r in complete])
    except ValueError:
        raise ConfigError(f"response column {response!r} is not numeric") from None
    raw = [[r[c] for c in predictors] for r in complete]
    levels = {}
    xs = np.empty((len(complete), len(predictors)))
    for j, name in enumerate(predictors):
        col = [row[j] for row in raw]
        lev = _factor_levels(col, name)
        if lev is not None:
            levels[name] = lev
        xs[:, j] = _encode(col, name, lev)
    lo, hi = xs.min(axis=0), xs.max(axis=0)
    const = [p for p, a, b in zip(predictors, lo, hi) if not a < b]
    if const:
        raise ConfigError(f"predictor(s) {const} are constant and cannot be rescaled")
    scaled = (xs - lo) / (hi - lo)
    return LoadedData(Dataset(scaled, y), response, predictors, lo, hi, levels, raw, dropped)


def write_regions(fh, predictors, rows):
    """``rows``: (row_id, raw predictor strings, region) triples."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["row_id", *predictors, "piece_index", "lower", "upper"])
    for row_id, raw, region in rows:
        for k, (a, b) in enumerate(region):
            w.writerow([row_id, *raw, k, fmt(a), fmt(b)])


def read_regions(fh) -> dict:
    """Inverse of ``write_regions``: row_id -> list of (lower, upper)."""
    out = {}
    for r in csv.DictReader(fh):
        out.setdefault(int(r["row_id"]), []).append((float(r["lower"]), float(r["upper"])))
    return out


def _raw_predictor(v: str) -> str:
    try:
        return fmt(float(v))
    except ValueError:
        return v.strip()


def _spec(args) -> ModelSpec:
    link = args.link or DEFAULT_LINK.get(args.family)
    return ModelSpec(args.family, link, args.degree)


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")


def fit_command(args, out) -> int:
    spec = _spec(args)
    m = 1 + args.degree * len(args.predictors)
    data = load_csv(args.data, args.response, args.predictors, min_rows=m + 2)
    model = fit(spec, data.dataset)
    if data.dropped:
        print(f"dropped {data.dropped} incomplete row(s)", file=sys.stderr)
    terms = ["intercept"] + [f"{p}^{k}" if k > 1 else p for p in data.predictors
                             for k in range(1, args.degree + 1)]
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["term", "estimate"])
    for t, b in zip(terms, model.beta):
        w.writerow([t, fmt(b)])
    w.writerow(["dispersion", fmt(model.dispersion)])
    w.writerow(["log_likelihood", fmt(model.log_likelihood)])
    return EXIT_OK


def _partition(args, data: LoadedData) -> BinPartition:
    d = len(data.predictors)
    if args.partition_column:
        if args.partition_column not in data.predictors:
            raise ConfigError(f"partition column {args.partition_column!r} is not a predictor")
        return BinPartition(d, 2, axes=(data.predictors.index(args.partition_column),))
    bins = args.bins if args.bins is not None else default_bins(data.dataset.n)
    return BinPartition(d, bins)


def predict_command(args, out) -> int:
    _check_alpha(args.alpha)
    if args.method not in METHODS:
        raise ConfigError(f"unknown method {args.method!r}; valid methods: {', '.join(METHODS)}")
    spec = _spec(args)
    m = 1 + args.degree * len(args.predictors)
    data = load_csv(args.data, args.response, args.predictors, min_rows=m + 2)
    if data.dropped:
        print(f"dropped {data.dropped} incomplete row(s)", file=sys.stderr)
    if args.query:
        with open(args.query, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        absent = [p for p in data.predictors if rows and p not in rows[0]]
        if absent:
            raise ConfigError(f"query file lacks predictor column(s) {absent}")
        raw = [[r[p] for p in data.predictors] for r in rows]
        xs = data.scale(raw)
        if np.any((xs < 0) | (xs > 1)):
            raise ConfigError("query predictors fall outside the training range")
    else:
        raw, xs = data.raw, data.dataset.xs
    config = ConformalConfig(alpha=args.alpha, precision=args.precision)
    partition = _partition(args, data)
    if args.method in ("trans", "bin", "hd"):
        pc = ParametricConformal(data.dataset, spec, config, partition)
        region = {"trans": pc.transform, "bin": pc.binned, "hd": pc.hd}[args.method]
    elif args.method == "kernel":
        region = KernelConformal(data.dataset, partition, config).region
    else:
        rc = ResidualConformal(data.dataset, spec, args.alpha, args.grid_points,
                               window=config.window(data.dataset.y))
        region = rc.ls if args.method == "ls" else rc.lslw
    results = []
    n_empty = 0
    for i, (r, x) in enumerate(zip(raw, xs)):
        reg = region(x)
        n_empty += reg.empty
        results.append((i, [_raw_predictor(v) for v in r], reg))
    write_regions(out, data.predictors, results)
    if n_empty:
        print(f"{n_empty} query point(s) have an empty region and no output rows", file=sys.stderr)
    return EXIT_OK


def simulate_command(args, out) -> int:
    _check_alpha(args.alpha)
    if args.reps < 1:
        raise ConfigError("reps must be at least 1")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ConfigError(f"unknown method(s) {bad}; valid methods: {', '.join(METHODS)}")
    setting = make_setting(args.setting, n=args.n, shape=args.shape, sigma2=args.sigma2)
    result = run_study(setting, methods, reps=args.reps, alpha=args.alpha, master_seed=args.seed,
                       workers=args.workers, precision=args.precision, bins=args.bins,
                       grid_points=args.grid_points, holdout=args.holdout)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["method", "metric", "value"])
    for method in methods:
        rep = result.reports[method]
        w.writerow([method, "marginal_coverage", fmt(rep.marginal_coverage)])
        for k, v in rep.local_coverage.items():
            w.writerow([method, f"local_coverage_bin_{k}", fmt(v)])
        w.writerow([method, "mean_area", fmt(rep.mean_area)])
        w.writerow([method, "prediction_error", fmt(rep.prediction_error)])
        w.writerow([method, "skipped_reps", result.skipped])
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _model_args(p):
    p.add_argument("--data", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--predictors", required=True, type=lambda s: [c.strip() for c in s.split(",") if c.strip()],
                   help="comma-separated predictor columns")
    p.add_argument("--family", choices=("gaussian", "gamma"), default="gaussian")
    p.add_argument("--link", choices=("identity", "inverse", "log"))
    p.add_argument("--degree", type=int, default=1)
    p.add_argument("--out", default="-")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="glmconformal", description="Parametric conformal prediction regions for GLMs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    _model_args(sub.add_parser("fit", help="maximum-likelihood fit; prints coefficients"))

    p = sub.add_parser("predict", help="prediction regions at the training or query rows")
    _model_args(p)
    p.add_argument("--method", default="trans")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--precision", type=float, default=0.005)
    p.add_argument("--bins", type=int)
    p.add_argument("--partition-column", help="bin by the two levels of this factor column only")
    p.add_argument("--grid-points", type=int, default=100)
    p.add_argument("--query", help="CSV of predictor values; defaults to the training rows")

    p = sub.add_parser("simulate", help="Monte Carlo study for setting A, B or C")
    p.add_argument("--setting", choices=("A", "B", "C"), type=str.upper, default="C")
    p.add_argument("--n", type=int, default=150)
    p.add_argument("--reps", type=int, default=250)
    p.add_argument("--shape", type=float)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--precision", type=float, default=0.005)
    p.add_argument("--bins", type=int)
    p.add_argument("--grid-points", type=int, default=100)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--holdout", type=int, default=0, help="evaluate on this many fresh draws per replication")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="-")
    return parser


_COMMANDS = {"fit": fit_command, "predict": predict_command, "simulate": simulate_command}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.out == "-":
            return _COMMANDS[args.command](args, sys.stdout)
        with open(args.out, "w", newline="", encoding="utf-8") as out:
            return _COMMANDS[args.command](args, out)
    except (FitError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

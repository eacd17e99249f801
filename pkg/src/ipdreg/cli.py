"""Command line entry point: ``ipdreg simulate | estimate | report``.

Exit codes: 0 success, 2 usage/configuration/schema error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import artifacts
from .artifacts import SchemaError
from .estimators import METHODS, Dataset, MissingOutcomeError, RelationshipError, estimate
from .numerics import RankDeficiencyError
from .simulation import SimSetting, render_table, run_monte_carlo

log = logging.getLogger("ipdreg")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _methods(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise argparse.ArgumentTypeError(f"unknown method(s) {bad}; choose from {','.join(METHODS)}")
    return methods


def _probability(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ipdreg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Monte Carlo study for one setting and effect size")
    sim.add_argument("--setting", type=int, choices=(1, 2, 3), required=True)
    sim.add_argument("--n-t", type=int, help="training set size")
    sim.add_argument("--n", type=int, help="labeled set size")
    sim.add_argument("--big-n", type=int, help="unlabeled set size")
    sim.add_argument("--beta1", type=float, default=0.0)
    sim.add_argument("--reps", type=int, default=1000)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--methods", type=_methods, default=list(METHODS))
    sim.add_argument("--alpha", type=_probability, default=0.05)
    sim.add_argument("--t-approx", action="store_true", help="Student-t reference distribution")
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--out", type=Path, help="directory for metrics.json, metrics.csv, replicates.csv, table.txt")

    est = sub.add_parser("estimate", help="fit one estimator to labeled/unlabeled CSV files")
    est.add_argument("--labeled", type=Path, required=True)
    est.add_argument("--unlabeled", type=Path, required=True)
    est.add_argument("--outcome-col", default="y")
    est.add_argument("--prediction-col", default="f")
    est.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    est.add_argument("--method", choices=METHODS, default="proposed")
    est.add_argument("--alpha", type=_probability, default=0.05)
    est.add_argument("--t-approx", action="store_true")
    est.add_argument("--no-intercept", action="store_true")
    est.add_argument("--out", type=Path, help="write JSON here instead of stdout")

    rep = sub.add_parser("report", help="render metrics JSON files as one table")
    rep.add_argument("paths", type=Path, nargs="+")
    rep.add_argument("--out", type=Path)
    return parser


def cmd_simulate(args) -> int:
    overrides = {k: v for k, v in (("n_t", args.n_t), ("n", args.n), ("N", args.big_n)) if v is not None}
    if args.reps < 2:
        raise CliError(EXIT_USAGE, "--reps must be >= 2")
    if args.workers < 1:
        raise CliError(EXIT_USAGE, "--workers must be >= 1")
    if not 0 <= args.seed < 2**64:
        raise CliError(EXIT_USAGE, "--seed must be an unsigned 64-bit integer")
    try:
        setting = SimSetting.default(args.setting, args.beta1, **overrides)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc

    log.info("running %d replicates of setting %d (beta1=%g)", args.reps, args.setting, args.beta1)
    try:
        result = run_monte_carlo(setting, args.reps, args.seed, args.methods, args.alpha,
                                 workers=args.workers, t_approx=args.t_approx)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise CliError(EXIT_RUNTIME, f"simulation failed: {exc}") from exc

    table = render_table(result.rows)
    if result.n_failed:
        log.warning("%d method fits failed and were excluded from the metrics", result.n_failed)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        artifacts.atomic_write(args.out / "metrics.json", artifacts.dumps(artifacts.metrics_json(result, args.methods)))
        artifacts.atomic_write(args.out / "metrics.csv", artifacts.metrics_csv(result.rows))
        artifacts.atomic_write(args.out / "replicates.csv", artifacts.records_csv(result.records))
        artifacts.atomic_write(args.out / "table.txt", table)
    sys.stdout.write(table)
    return EXIT_OK


def load_dataset(args) -> Dataset:
    lab_header, lab = artifacts.read_csv_table(args.labeled)
    unl_header, unl = artifacts.read_csv_table(args.unlabeled)
    y_col, f_col = args.outcome_col, args.prediction_col
    if args.covariates:
        covs = [c.strip() for c in args.covariates.split(",") if c.strip()]
    else:
        covs = [c for c in lab_header if c not in (y_col, f_col)]
    artifacts.require_columns(args.labeled, lab_header, [y_col, f_col, *covs])
    artifacts.require_columns(args.unlabeled, unl_header, [f_col, *covs])
    if args.method == "oracle":
        artifacts.require_columns(args.unlabeled, unl_header, [y_col])

    def design(table, rows):
        if not covs:
            return np.empty((rows, 0))
        return np.column_stack([table[c] for c in covs])

    n, N = len(lab[y_col]), len(unl[f_col])
    y_u = unl.get(y_col) if args.method == "oracle" else None
    kwargs = dict(y_unlabeled=y_u, names=covs, intercept=not args.no_intercept)
    try:
        return Dataset.from_covariates(lab[y_col], design(lab, n), lab[f_col],
                                       design(unl, N), unl[f_col], **kwargs)
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def cmd_estimate(args) -> int:
    dataset = load_dataset(args)
    try:
        result = estimate(dataset, args.method, alpha=args.alpha, t_approx=args.t_approx)
    except MissingOutcomeError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    except (RankDeficiencyError, RelationshipError, np.linalg.LinAlgError, ArithmeticError) as exc:
        raise CliError(EXIT_RUNTIME, f"estimation failed: {exc}") from exc
    text = artifacts.dumps(artifacts.fit_result_json(result))
    if args.out is not None:
        artifacts.atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for path in args.paths:
        if not path.exists():
            raise CliError(EXIT_USAGE, f"{path}: no such file")
        rows.extend(artifacts.load_metrics(path))
    table = render_table(rows)
    if args.out is not None:
        artifacts.atomic_write(args.out, table)
    else:
        sys.stdout.write(table)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

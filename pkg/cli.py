#!/usr/bin/env python3
"""Command-line front end for shiftlab.

Fits the two-step model on a labeled source CSV and an unlabeled target CSV,
reuses the saved model for predictions, target means and ROC/AUC, checks
identification, and runs the Monte-Carlo study.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, NoReturn

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from shiftlab.core import CovariateBlock, FloatArray, PooledDataset
from shiftlab.data_io import (
    ColumnSchema,
    ModelArtifact,
    estimator_options,
    load_combined,
    load_covariates,
    load_labeled,
    load_pooled,
    write_frame,
    write_labeled,
    write_predictions,
)
from shiftlab.exceptions import ShiftLabError
from shiftlab.functionals import EstimatorMethod, estimate_functional, label_indicator
from shiftlab.outcome_model import LogisticOptions, fit_logistic
from shiftlab.pipeline import TwoStepEstimator, TwoStepFit, bootstrap_fit, classifier_statistic
from shiftlab.rocauc import DEFAULT_GRID, EstimatedPosterior, FixedScore, ScoreSpec
from shiftlab.simlab import SimConfig, gen_replicate, load_sim_config, run_study
from shiftlab.tilt import IdentificationReport, TiltOptions, check_identification_covariates

logger = logging.getLogger("shiftlab.cli")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIAGNOSTIC = 2

SIM_GROUP_COLUMNS = ("x1",)
SIM_FEATURE_COLUMNS = ("x21", "x22", "x23", "x24")


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text}") from exc


def _csv_names(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _threads(args: argparse.Namespace) -> int:
    """Thread count; SHIFTLAB_THREADS wins over --threads."""
    value = os.getenv("SHIFTLAB_THREADS")
    if value:
        try:
            threads = int(value)
        except ValueError as exc:
            raise ShiftLabError(f"SHIFTLAB_THREADS must be an integer, got {value!r}") from exc
    else:
        threads = 1 if args.threads is None else args.threads
    if threads < 1:
        raise ShiftLabError(f"thread count must be at least 1, got {threads}")
    return threads


def _schema(args: argparse.Namespace) -> ColumnSchema:
    if args.schema:
        return _override_domain(ColumnSchema.load(args.schema), args.domain_column)
    if not args.group_columns:
        raise ShiftLabError("no group columns given. Pass --group-columns or --schema.")
    return ColumnSchema(
        tuple(args.group_columns),
        tuple(args.feature_columns or ()),
        args.label_column,
        args.domain_column,
    )


def _load_data(
    args: argparse.Namespace, schema: ColumnSchema, annotations: Sequence[str] = ()
) -> PooledDataset:
    if args.data:
        return load_combined(args.data, schema, annotations)
    if not (args.source and args.target):
        raise ShiftLabError("pass --source and --target, or one --data file with --domain-column")
    return load_pooled(args.source, args.target, schema, annotations)


def _print_report(report: IdentificationReport | None) -> None:
    if report is None:
        print("   • Identification: not checked")
        return
    status = "passed" if report.passed else "FAILED"
    print(f"   • Identification: {status}")
    print(f"     rank condition: {report.rank_ok} ({report.distinct_x1_points} group values)")
    print(f"     instrument condition: {report.instrument_ok}")
    print(f"     overlap: {report.overlap_ok}")
    for message in report.messages:
        print(f"     - {message}")


def _json_out(document: dict[str, Any]) -> None:
    print(json.dumps(document, indent=2))


# -----------------------------------------------------------------------------
# Commands
# -----------------------------------------------------------------------------


def cmd_fit(args: argparse.Namespace) -> int:
    """Fit the outcome model and the tilt, then save the artifact."""
    schema = _schema(args)
    estimator = TwoStepEstimator(
        outcome_options=LogisticOptions(
            tolerance=args.tolerance,
            max_iterations=args.max_iterations,
            penalty=args.penalty,
            standardize=args.standardize,
        ),
        tilt_options=TiltOptions(tolerance=args.tolerance, max_iterations=args.tilt_max_iterations),
        ridge_grid=args.ridge_grid,
        folds=args.folds,
        seed=args.seed,
        starts=args.starts,
        variation_tol=args.variation_tol,
        snap_decimals=args.snap_decimals,
    )

    print(" shiftlab: two-step fit")
    print("=" * 50)

    # Step 1: Load data
    data = _load_data(args, schema)
    print(f"\n Loaded {data.n1} source rows and {data.n0} target rows")

    # Step 2: Fit both steps
    fit = estimator.fit(data)

    print("\n" + "=" * 50)
    print(" Summary:")
    slopes = np.array2string(fit.xi.xi1, precision=6)
    print(f"   • xi: intercept {fit.xi.xi0:.6g}, slopes {slopes}")
    theta = fit.theta
    print(f"   • theta: alpha0 {theta.alpha0:.6g}, beta0 {np.array2string(theta.beta0)}")
    print(f"            alpha1 {theta.alpha1:.6g}, beta1 {np.array2string(theta.beta1)}")
    if fit.ridge is not None:
        print(f"   • Ridge penalty (CV): {fit.ridge.penalty:g}")
    print(f"   • Converged: {fit.converged} ({fit.tilt.iterations} tilt iterations)")
    _print_report(fit.identification)

    if not fit.converged:
        print(
            f" Fit did not converge (tilt gradient {fit.tilt.final_gradient_norm:.3e} after "
            f"{fit.tilt.iterations} iterations); no model written. Raise --max-iterations or "
            "--tilt-max-iterations.",
            file=sys.stderr,
        )
        return EXIT_ERROR

    if args.strict and fit.identification is not None and not fit.identification.passed:
        print(" Identification failed under --strict; no model written.", file=sys.stderr)
        return EXIT_DIAGNOSTIC

    # Step 3: Save artifact
    artifact = ModelArtifact.from_fit(fit, schema, data, estimator_options(estimator, fit))
    artifact.to_json(args.output)
    print(f"   • Model written to: {args.output}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    """Write plug-in target posteriors and labels for new covariates."""
    artifact = ModelArtifact.from_json(args.model)
    fit = artifact.to_fit()
    covariates = load_covariates(args.covariates, artifact.schema)
    posterior = fit.posterior(covariates)
    labels = (posterior >= args.threshold).astype(np.int64)
    if args.output:
        write_predictions(args.output, posterior, labels)
        print(f" Wrote {len(labels)} predictions to {args.output}", file=sys.stderr)
    else:
        write_predictions(sys.stdout, posterior, labels)
    return EXIT_OK


def cmd_mean(args: argparse.Namespace) -> int:
    """Estimate a target mean, optionally with a bootstrap interval."""
    artifact = ModelArtifact.from_json(args.model)
    schema = _override_domain(artifact.schema, args.domain_column)
    data = _load_data(args, schema)
    method = EstimatorMethod(args.method)
    h = label_indicator(args.label_value)

    def statistic(fit: TwoStepFit, sample: PooledDataset) -> FloatArray:
        return np.array([estimate_functional(h, sample, fit.theta, fit.xi, method).value])

    base = artifact.to_fit()
    document: dict[str, Any] = {
        "method": method.value,
        "label_value": args.label_value,
        "estimate": float(statistic(base, data)[0]),
        "ci_low": None,
        "ci_high": None,
    }
    if args.bootstrap:
        result = bootstrap_fit(
            data,
            artifact.estimator(),
            statistic,
            B=args.bootstrap,
            level=args.level,
            seed=args.seed,
            threads=_threads(args),
            refit_outcome=not args.hold_outcome_fixed,
            fit=base,
        )
        interval = result.component(0)
        document.update(
            ci_low=interval.ci_low,
            ci_high=interval.ci_high,
            level=args.level,
            B=args.bootstrap,
            failures=interval.failures,
        )
    _json_out(document)
    return EXIT_OK


def _score(spec: str) -> tuple[ScoreSpec, tuple[str, ...]]:
    if spec == "posterior":
        return EstimatedPosterior(), ()
    if spec.startswith("fixed:") and spec[len("fixed:") :]:
        column = spec[len("fixed:") :]
        return FixedScore.from_column(column), (column,)
    raise ShiftLabError(f"unknown score {spec!r}; use 'posterior' or 'fixed:<column>'")


def _override_domain(schema: ColumnSchema, domain_column: str | None) -> ColumnSchema:
    if not domain_column:
        return schema
    return ColumnSchema(
        schema.group_columns, schema.feature_columns, schema.label_column, domain_column
    )


def cmd_roc(args: argparse.Namespace) -> int:
    """Estimate the target ROC curve and AUC of a score."""
    artifact = ModelArtifact.from_json(args.model)
    score, annotations = _score(args.score)
    data = _load_data(args, _override_domain(artifact.schema, args.domain_column), annotations)
    grid = np.asarray(args.grid if args.grid else DEFAULT_GRID, dtype=np.float64)
    statistic = classifier_statistic(score, grid)
    base = artifact.to_fit()
    point = statistic(base, data)

    low = high = np.full(point.size, np.nan)
    if args.bootstrap:
        result = bootstrap_fit(
            data,
            artifact.estimator(),
            statistic,
            B=args.bootstrap,
            level=args.level,
            seed=args.seed,
            threads=_threads(args),
            refit_outcome=not args.hold_outcome_fixed,
            fit=base,
        )
        low, high = result.ci_low, result.ci_high

    curve = pd.DataFrame({"u": grid, "roc": point[1:], "ci_low": low[1:], "ci_high": high[1:]})
    write_frame(curve, args.output)
    document: dict[str, Any] = {
        "score": score.name,
        "auc": float(point[0]),
        "ci_low": None if not args.bootstrap else float(low[0]),
        "ci_high": None if not args.bootstrap else float(high[0]),
        "curve": str(args.output),
    }
    _json_out(document)
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    """Check identification on the source rows (and target rows, if given)."""
    schema = _schema(args)
    source = load_labeled(args.source, schema)
    outcome = fit_logistic(source, LogisticOptions(penalty=args.penalty))
    covariates = source.covariates
    if args.target:
        covariates = CovariateBlock.concat(covariates, load_covariates(args.target, schema))
    report = check_identification_covariates(
        covariates, outcome.params, args.variation_tol, args.snap_decimals
    )

    print(" shiftlab: identification diagnostics")
    print("=" * 50)
    print(f"\n Checked {covariates.n} rows")
    _print_report(report)
    return EXIT_OK if report.passed else EXIT_DIAGNOSTIC


def _emit_data(config: SimConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    replicate = gen_replicate(config, 0)
    schema = ColumnSchema(SIM_GROUP_COLUMNS, SIM_FEATURE_COLUMNS, "y")
    write_labeled(
        directory / "source.csv", replicate.data.source.covariates, replicate.data.source.y, schema
    )
    write_labeled(directory / "target.csv", replicate.data.target, None, schema)
    write_frame(pd.DataFrame({"y": replicate.target_labels}), directory / "target_labels.csv")
    schema.save(directory / "schema.json")


def cmd_simulate(args: argparse.Namespace) -> int:
    """Run the Monte-Carlo study and print the metrics table."""
    overrides: dict[str, Any] = {
        "reps": args.reps,
        "seed": args.seed,
        "bootstrap_B": args.bootstrap,
        "n1": args.n1,
        "n0": args.n0,
        "truth_size": args.truth_size,
        "threads": None,
    }
    if args.threads is not None or os.getenv("SHIFTLAB_THREADS"):
        overrides["threads"] = _threads(args)
    if args.include_ideal:
        overrides["include_ideal"] = True
    if args.config:
        config = load_sim_config(args.config, **overrides)
    else:
        config = SimConfig.reference_defaults(
            **{key: value for key, value in overrides.items() if value is not None}
        )

    print(" shiftlab: simulation study")
    print("=" * 50)

    if args.emit_data:
        _emit_data(config, Path(args.emit_data))
        print(f"\n Replicate 0 written to: {args.emit_data}")

    if args.emit_only:
        return EXIT_OK

    print(
        f"\n Running {config.reps} replicates (n1={config.n1}, n0={config.n0}, "
        f"B={config.bootstrap_B}, threads={config.threads})..."
    )
    table = run_study(config)

    print("\n" + "=" * 50)
    print(table.to_text())
    if args.output:
        table.to_csv(args.output)
        print(f"\n Table written to: {args.output}")
    if args.raw_output:
        write_frame(table.raw_frame(), args.raw_output)
        print(f" Per-replicate estimates written to: {args.raw_output}")
    return EXIT_OK


# -----------------------------------------------------------------------------
# Argument parsing
# -----------------------------------------------------------------------------


def _add_schema_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--schema", type=str, help="JSON file with the column schema")
    parser.add_argument(
        "--group-columns", type=_csv_names, help="Comma-separated group feature columns (x1)"
    )
    parser.add_argument(
        "--feature-columns", type=_csv_names, help="Comma-separated non-group feature columns"
    )
    parser.add_argument("--label-column", type=str, default="y", help="Label column")
    parser.add_argument("--domain-column", type=str, help="Domain column of a combined file")


def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--source", type=str, help="Labeled source CSV")
    parser.add_argument("--target", type=str, help="Unlabeled target CSV")
    parser.add_argument("--data", type=str, help="Combined CSV split by --domain-column")


def _add_bootstrap_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", type=str, required=True, help="Model artifact from 'fit'")
    parser.add_argument("--domain-column", type=str, help="Domain column of a combined file")
    parser.add_argument("--bootstrap", type=int, default=0, help="Bootstrap resamples (0: none)")
    parser.add_argument("--level", type=float, default=0.95, help="Confidence level")
    parser.add_argument("--seed", type=int, default=0, help="Bootstrap seed")
    parser.add_argument("--threads", type=int, default=1, help="Bootstrap threads")
    parser.add_argument(
        "--hold-outcome-fixed",
        action="store_true",
        help="Keep the outcome model at its full-data fit inside the bootstrap",
    )


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits with code 1 on usage errors."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        description="Transfer learning for binary classification under group-label shift"
    )
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    fit = commands.add_parser("fit", help="Fit the two-step model and save it")
    _add_schema_flags(fit)
    _add_data_flags(fit)
    fit.add_argument("--output", type=str, default="model.json", help="Artifact path")
    fit.add_argument("--penalty", type=float, default=0.0, help="Ridge penalty of step 1")
    fit.add_argument(
        "--ridge-grid", type=_csv_floats, help="Penalties to choose from by cross-validation"
    )
    fit.add_argument("--folds", type=int, default=5, help="Cross-validation folds")
    fit.add_argument("--standardize", action="store_true", help="Standardize step-1 columns")
    fit.add_argument("--tolerance", type=float, default=1e-8, help="Gradient tolerance")
    fit.add_argument("--max-iterations", type=int, default=100, help="Step-1 iteration cap")
    fit.add_argument(
        "--tilt-max-iterations", type=int, default=500, help="Step-2 iteration cap"
    )
    fit.add_argument("--starts", type=int, default=1, help="Tilt starting points")
    fit.add_argument("--seed", type=int, default=0, help="Seed for CV folds and extra starts")
    fit.add_argument("--variation-tol", type=float, default=1e-6, help="Instrument threshold")
    fit.add_argument("--snap-decimals", type=int, help="Round group values before checks")
    fit.add_argument(
        "--strict", action="store_true", help="Exit with code 2 if identification fails"
    )
    fit.set_defaults(handler=cmd_fit)

    predict = commands.add_parser("predict", help="Target posteriors and labels")
    predict.add_argument("--model", type=str, required=True, help="Model artifact from 'fit'")
    predict.add_argument("--covariates", type=str, required=True, help="Covariates CSV")
    predict.add_argument("--threshold", type=float, default=0.5, help="Label threshold")
    predict.add_argument("--output", type=str, help="Output CSV (default: stdout)")
    predict.set_defaults(handler=cmd_predict)

    mean = commands.add_parser("mean", help="Target mean of a label indicator")
    _add_data_flags(mean)
    _add_bootstrap_flags(mean)
    mean.add_argument("--method", choices=["iw", "reg"], default="reg", help="Estimator")
    mean.add_argument(
        "--label-value", type=int, choices=[0, 1], default=1, help="Estimate P(Y = value)"
    )
    mean.set_defaults(handler=cmd_mean)

    roc = commands.add_parser("roc", help="Target ROC curve and AUC of a score")
    _add_data_flags(roc)
    _add_bootstrap_flags(roc)
    roc.add_argument(
        "--score", type=str, default="posterior", help="'posterior' or 'fixed:<column>'"
    )
    roc.add_argument("--grid", type=_csv_floats, help="False-positive rates of the curve")
    roc.add_argument("--output", type=str, default="roc.csv", help="Curve CSV path")
    roc.set_defaults(handler=cmd_roc)

    diagnose = commands.add_parser("diagnose", help="Identification diagnostics")
    _add_schema_flags(diagnose)
    diagnose.add_argument("--source", type=str, required=True, help="Labeled source CSV")
    diagnose.add_argument("--target", type=str, help="Optional unlabeled target CSV")
    diagnose.add_argument("--penalty", type=float, default=0.0, help="Ridge penalty")
    diagnose.add_argument("--variation-tol", type=float, default=1e-6, help="Instrument threshold")
    diagnose.add_argument("--snap-decimals", type=int, help="Round group values before checks")
    diagnose.set_defaults(handler=cmd_diagnose)

    simulate = commands.add_parser("simulate", help="Monte-Carlo study")
    source = simulate.add_mutually_exclusive_group()
    source.add_argument("--config", type=str, help="JSON or YAML simulation config")
    source.add_argument(
        "--paper-defaults", action="store_true", help="Reference design (the default)"
    )
    simulate.add_argument("--reps", type=int, help="Replicates")
    simulate.add_argument("--seed", type=int, help="Root seed")
    simulate.add_argument("--bootstrap", type=int, help="Bootstrap resamples per replicate")
    simulate.add_argument("--n1", type=int, help="Source sample size")
    simulate.add_argument("--n0", type=int, help="Target sample size")
    simulate.add_argument("--truth-size", type=int, help="Ground-truth sample size")
    simulate.add_argument("--include-ideal", action="store_true", help="Add the Ideal method")
    simulate.add_argument("--threads", type=int, help="Replicate threads")
    simulate.add_argument("--output", type=str, help="Metrics table CSV")
    simulate.add_argument("--raw-output", type=str, help="Per-replicate estimates CSV")
    simulate.add_argument("--emit-data", type=str, help="Write replicate 0 as CSVs here")
    simulate.add_argument("--emit-only", action="store_true", help="Stop after --emit-data")
    simulate.set_defaults(handler=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, run one command and return its exit code."""
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code is None:
            return EXIT_OK
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR

    level = "DEBUG" if args.verbose else os.getenv("SHIFTLAB_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logger.debug("running command %s", args.command)

    try:
        code: int = args.handler(args)
    except OSError as exc:
        parser.print_usage(sys.stderr)
        print(f" Error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ShiftLabError as exc:
        print(f" Error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return code


if __name__ == "__main__":
    sys.exit(main())

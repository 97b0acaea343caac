"""CSV ingestion, prediction output, and the JSON model artifact.

CSV files must have a header row, use UTF-8 and a '.' decimal separator.
Numeric columns are parsed strictly: an empty or non-numeric cell raises
:class:`~shiftlab.exceptions.DataFormatError` naming its row and column.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, TextIO

import numpy as np
import pandas as pd

from .core import (
    CovariateBlock,
    FloatArray,
    LabeledBlock,
    OutcomeModelParams,
    PooledDataset,
    TiltParams,
)
from .exceptions import ArtifactError, DataFormatError, ShiftLabError
from .outcome_model import LogisticOptions
from .pipeline import TwoStepEstimator, TwoStepFit
from .tilt import IdentificationReport, TiltFit, TiltOptions

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

_SOURCE_MARKERS = {"source", "1"}
_TARGET_MARKERS = {"target", "0"}


@dataclass(frozen=True)
class ColumnSchema:
    """Which CSV columns hold group features, non-group features, label and domain.

    Parameters
    ----------
    group_columns : tuple of str
        Columns of ``x1`` (at least one)
    feature_columns : tuple of str
        Columns of ``x2`` (may be empty)
    label_column : str, optional
        Binary label column, required in source rows
    domain_column : str, optional
        Column marking each row ``source``/``target`` (or ``1``/``0``) in a combined file
    """

    group_columns: tuple[str, ...]
    feature_columns: tuple[str, ...] = ()
    label_column: str | None = "y"
    domain_column: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "group_columns", tuple(self.group_columns))
        object.__setattr__(self, "feature_columns", tuple(self.feature_columns))
        if not self.group_columns:
            raise ShiftLabError("at least one group column is required")
        names = list(self.group_columns) + list(self.feature_columns)
        names += [c for c in (self.label_column, self.domain_column) if c is not None]
        duplicated = sorted({name for name in names if names.count(name) > 1})
        if duplicated:
            raise ShiftLabError(f"columns used twice in the schema: {', '.join(duplicated)}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "group_columns": list(self.group_columns),
            "feature_columns": list(self.feature_columns),
            "label_column": self.label_column,
            "domain_column": self.domain_column,
        }

    @classmethod
    def from_dict(cls, document: Mapping[str, Any]) -> ColumnSchema:
        expected = {"group_columns", "feature_columns", "label_column", "domain_column"}
        unknown = sorted(set(document) - expected)
        if unknown:
            raise ArtifactError(f"unknown schema fields: {', '.join(unknown)}")
        return cls(
            tuple(document.get("group_columns", ())),
            tuple(document.get("feature_columns", ())),
            document.get("label_column", "y"),
            document.get("domain_column"),
        )

    @classmethod
    def load(cls, path: str | Path) -> ColumnSchema:
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"{path}: not valid JSON ({exc})") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def read_table(path: str | Path) -> pd.DataFrame:
    """Read a CSV file keeping every cell as text."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise DataFormatError(f"{path} is empty; a header row is required") from exc
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"{path} is not a valid UTF-8 CSV file: {exc}") from exc
    logger.debug("read %d rows from %s", len(frame), path)
    return frame


def numeric_column(frame: pd.DataFrame, column: str) -> FloatArray:
    """Parse one column as finite floats, failing on the first bad cell."""
    if column not in frame.columns:
        raise DataFormatError(f"missing column; found {list(frame.columns)}", column=column)
    text = frame[column].str.strip()
    values = pd.to_numeric(text, errors="coerce").to_numpy(dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        row = int(bad[0])
        raise DataFormatError(
            f"expected a finite number, found {frame[column].iloc[row]!r}",
            row=row + 1,
            column=column,
        )
    return values


def _labels(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = numeric_column(frame, column)
    bad = np.flatnonzero((values != 0) & (values != 1))
    if bad.size:
        row = int(bad[0])
        raise DataFormatError(
            f"labels must be 0 or 1, found {frame[column].iloc[row]!r}", row=row + 1, column=column
        )
    return values.astype(np.int64)


def _covariates(
    frame: pd.DataFrame, schema: ColumnSchema, annotations: Iterable[str] = ()
) -> CovariateBlock:
    if frame.empty:
        raise DataFormatError("no data rows")
    x1 = np.column_stack([numeric_column(frame, c) for c in schema.group_columns])
    x2 = (
        np.column_stack([numeric_column(frame, c) for c in schema.feature_columns])
        if schema.feature_columns
        else np.zeros((len(frame), 0))
    )
    extra = {name: numeric_column(frame, name) for name in annotations}
    return CovariateBlock(x1, x2, extra)


def load_covariates(
    path: str | Path, schema: ColumnSchema, annotations: Iterable[str] = ()
) -> CovariateBlock:
    """Load unlabeled covariates, carrying extra numeric columns as annotations."""
    return _covariates(read_table(path), schema, annotations)


def load_labeled(path: str | Path, schema: ColumnSchema) -> LabeledBlock:
    """Load labeled source rows."""
    if schema.label_column is None:
        raise ShiftLabError("a label column is required for source data")
    frame = read_table(path)
    return LabeledBlock(_covariates(frame, schema), _labels(frame, schema.label_column))


def load_pooled(
    source_path: str | Path,
    target_path: str | Path,
    schema: ColumnSchema,
    annotations: Iterable[str] = (),
) -> PooledDataset:
    """Load a source CSV and a target CSV into one dataset."""
    return PooledDataset(
        load_labeled(source_path, schema), load_covariates(target_path, schema, annotations)
    )


def load_combined(
    path: str | Path, schema: ColumnSchema, annotations: Iterable[str] = ()
) -> PooledDataset:
    """Load one CSV whose domain column splits rows into source and target."""
    if schema.domain_column is None or schema.label_column is None:
        raise ShiftLabError("a combined file needs both a domain column and a label column")
    frame = read_table(path)
    if schema.domain_column not in frame.columns:
        raise DataFormatError("missing column", column=schema.domain_column)
    marker = frame[schema.domain_column].str.strip().str.lower()
    unknown = np.flatnonzero(~marker.isin(_SOURCE_MARKERS | _TARGET_MARKERS).to_numpy())
    if unknown.size:
        row = int(unknown[0])
        raise DataFormatError(
            "domain must be source/target or 1/0, "
            f"found {frame[schema.domain_column].iloc[row]!r}",
            row=row + 1,
            column=schema.domain_column,
        )
    is_source = marker.isin(_SOURCE_MARKERS).to_numpy()
    source = frame[is_source].reset_index(drop=True)
    target = frame[~is_source].reset_index(drop=True)
    return PooledDataset(
        LabeledBlock(_covariates(source, schema), _labels(source, schema.label_column)),
        _covariates(target, schema, annotations),
    )


def write_frame(frame: pd.DataFrame, path: str | Path | TextIO) -> None:
    frame.to_csv(path, index=False, float_format="%.17g")


def write_predictions(
    path: str | Path | TextIO, posterior: FloatArray, labels: np.ndarray
) -> None:
    write_frame(pd.DataFrame({"posterior": posterior, "label": labels}), path)


def write_labeled(
    path: str | Path, covariates: CovariateBlock, y: np.ndarray | None, schema: ColumnSchema
) -> None:
    """Write covariates (and labels, if given) with the schema's column names."""
    assert covariates.x2 is not None
    columns: dict[str, Any] = {}
    for k, name in enumerate(schema.group_columns):
        columns[name] = covariates.x1[:, k]
    for k, name in enumerate(schema.feature_columns):
        columns[name] = covariates.x2[:, k]
    if y is not None and schema.label_column is not None:
        columns[schema.label_column] = np.asarray(y)
    write_frame(pd.DataFrame(columns), path)


# -----------------------------------------------------------------------------
# Model artifact
# -----------------------------------------------------------------------------


def _require(document: Mapping[str, Any], expected: Sequence[str], where: str) -> None:
    keys = set(document)
    unknown = sorted(keys - set(expected))
    missing = sorted(set(expected) - keys)
    if unknown:
        raise ArtifactError(f"{where}: unknown fields {', '.join(unknown)}")
    if missing:
        raise ArtifactError(f"{where}: missing fields {', '.join(missing)}")


def estimator_options(estimator: TwoStepEstimator, fit: TwoStepFit) -> dict[str, Any]:
    """Settings needed to refit like ``estimator`` did, with any CV penalty resolved."""
    outcome = estimator.for_replicates(fit).outcome_options
    tilt = estimator.tilt_options
    return {
        "outcome": {
            "tolerance": outcome.tolerance,
            "max_iterations": outcome.max_iterations,
            "penalty": outcome.penalty,
            "standardize": outcome.standardize,
        },
        "tilt": {
            "tolerance": tilt.tolerance,
            "max_iterations": tilt.max_iterations,
            "memory": tilt.memory,
        },
        "seed": estimator.seed,
        "starts": estimator.starts,
        "variation_tol": estimator.variation_tol,
        "snap_decimals": estimator.snap_decimals,
    }


@dataclass(frozen=True, eq=False)
class ModelArtifact:
    """Everything needed to reuse a fit: schema, parameters and diagnostics."""

    schema: ColumnSchema
    xi: OutcomeModelParams
    theta: TiltParams
    outcome: dict[str, Any] = field(default_factory=dict)
    tilt: dict[str, Any] = field(default_factory=dict)
    identification: dict[str, Any] | None = None
    options: dict[str, Any] = field(default_factory=dict)
    n1: int = 0
    n0: int = 0
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_fit(
        cls,
        fit: TwoStepFit,
        schema: ColumnSchema,
        data: PooledDataset,
        options: Mapping[str, Any] | None = None,
    ) -> ModelArtifact:
        outcome: dict[str, Any] = {}
        if fit.outcome is not None:
            outcome = {
                "converged": fit.outcome.converged,
                "iterations": fit.outcome.iterations,
                "final_gradient_norm": fit.outcome.final_gradient_norm,
                "penalty": fit.outcome.penalty,
                "possible_separation": fit.outcome.possible_separation,
            }
        tilt = {
            "converged": fit.tilt.converged,
            "iterations": fit.tilt.iterations,
            "final_gradient_norm": fit.tilt.final_gradient_norm,
            "objective_value": fit.tilt.objective_value,
        }
        report = None if fit.identification is None else asdict(fit.identification)
        if report is not None:
            report["messages"] = list(report["messages"])
        return cls(
            schema, fit.xi, fit.theta, outcome, tilt, report, dict(options or {}), data.n1, data.n0
        )

    @property
    def converged(self) -> bool:
        return bool(self.outcome.get("converged", True)) and bool(self.tilt.get("converged"))

    def identification_report(self) -> IdentificationReport | None:
        if self.identification is None:
            return None
        values = dict(self.identification)
        values["messages"] = tuple(values.get("messages", ()))
        return IdentificationReport(**values)

    def to_fit(self) -> TwoStepFit:
        """The stored parameters as a fit; step-1 details are not restored."""
        tilt = TiltFit(
            self.theta,
            bool(self.tilt.get("converged", True)),
            int(self.tilt.get("iterations", 0)),
            float(self.tilt.get("final_gradient_norm", 0.0)),
            float(self.tilt.get("objective_value", float("nan"))),
        )
        return TwoStepFit(self.xi, tilt, identification=self.identification_report())

    def estimator(self, diagnose: bool = False) -> TwoStepEstimator:
        """Rebuild the estimator settings recorded by ``estimator_options``."""
        options = self.options
        try:
            return TwoStepEstimator(
                outcome_options=LogisticOptions(**options.get("outcome", {})),
                tilt_options=TiltOptions(**options.get("tilt", {})),
                seed=int(options.get("seed", 0)),
                starts=int(options.get("starts", 1)),
                variation_tol=float(options.get("variation_tol", 1e-6)),
                snap_decimals=options.get("snap_decimals"),
                diagnose=diagnose,
            )
        except TypeError as exc:
            raise ArtifactError(f"invalid estimator options: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": self.format_version,
            "schema": self.schema.to_dict(),
            "xi": {"xi0": self.xi.xi0, "xi1": self.xi.xi1.tolist()},
            "theta": {
                "alpha0": self.theta.alpha0,
                "beta0": self.theta.beta0.tolist(),
                "alpha1": self.theta.alpha1,
                "beta1": self.theta.beta1.tolist(),
            },
            "outcome": self.outcome,
            "tilt": self.tilt,
            "identification": self.identification,
            "options": self.options,
            "n1": self.n1,
            "n0": self.n0,
        }

    def to_json(self, path: str | Path) -> None:
        """Write the artifact; floats use their shortest round-trip representation."""
        try:
            text = json.dumps(self.to_dict(), indent=2, allow_nan=False)
        except ValueError as exc:
            raise ArtifactError(f"artifact holds a non-finite value: {exc}") from exc
        Path(path).write_text(text + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, document: Mapping[str, Any]) -> ModelArtifact:
        _require(
            document,
            (
                "format_version",
                "schema",
                "xi",
                "theta",
                "outcome",
                "tilt",
                "identification",
                "options",
                "n1",
                "n0",
            ),
            "artifact",
        )
        if document["format_version"] != FORMAT_VERSION:
            raise ArtifactError(
                f"unsupported format_version {document['format_version']!r}; "
                f"this version reads {FORMAT_VERSION}"
            )
        _require(document["xi"], ("xi0", "xi1"), "xi")
        _require(document["theta"], ("alpha0", "beta0", "alpha1", "beta1"), "theta")
        try:
            xi = OutcomeModelParams(document["xi"]["xi0"], document["xi"]["xi1"])
            theta_doc = document["theta"]
            theta = TiltParams(
                theta_doc["alpha0"], theta_doc["beta0"], theta_doc["alpha1"], theta_doc["beta1"]
            )
            schema = ColumnSchema.from_dict(document["schema"])
        except (ShiftLabError, TypeError, ValueError) as exc:
            raise ArtifactError(f"invalid artifact contents: {exc}") from exc
        if xi.xi1.size != len(schema.group_columns) + len(schema.feature_columns):
            raise ArtifactError("xi length does not match the schema's columns")
        if theta.d != len(schema.group_columns):
            raise ArtifactError("theta dimension does not match the schema's group columns")
        return cls(
            schema,
            xi,
            theta,
            dict(document["outcome"]),
            dict(document["tilt"]),
            None if document["identification"] is None else dict(document["identification"]),
            dict(document["options"]),
            int(document["n1"]),
            int(document["n0"]),
            FORMAT_VERSION,
        )

    @classmethod
    def from_json(cls, path: str | Path) -> ModelArtifact:
        try:
            document = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(document, dict):
            raise ArtifactError(f"{path}: expected a JSON object")
        return cls.from_dict(document)

"""Estimators of target-population expectations ``E_0[h(X, Y)]``.

``h`` is a vectorized callable ``h(covariates, y) -> values`` over a
:class:`~shiftlab.core.CovariateBlock` and a label array; wrap scalar
functions of ``(CovariateVector, int)`` with :func:`pointwise`.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import (
    CovariateBlock,
    CovariateVector,
    FloatArray,
    IntArray,
    LabeledBlock,
    OutcomeModelParams,
    PooledDataset,
    SourceSample,
    TiltParams,
    joint_weight,
    target_posterior,
)
from .exceptions import DimensionMismatchError, NumericRangeError, ShiftLabError

TargetFunction = Callable[[CovariateBlock, IntArray], FloatArray]


class EstimatorMethod(str, Enum):
    """Importance-weighted (source average) or regression-type (target average)."""

    IW = "iw"
    REG = "reg"


@dataclass(frozen=True)
class FunctionalEstimate:
    value: float
    method: EstimatorMethod
    n_used: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise NumericRangeError(f"{self.method.name} estimate is not finite")


def pointwise(function: Callable[[CovariateVector, int], float]) -> TargetFunction:
    """Lift a scalar ``h(x, y)`` to the vectorized form the estimators expect."""

    def vectorized(covariates: CovariateBlock, y: IntArray) -> FloatArray:
        return np.array(
            [function(covariates.row(i), int(label)) for i, label in enumerate(y)],
            dtype=np.float64,
        )

    return vectorized


def label_value(covariates: CovariateBlock, y: IntArray) -> FloatArray:
    """``h(x, y) = y``; its target expectation is the prevalence."""
    return np.asarray(y, dtype=np.float64)


def label_indicator(value: int) -> TargetFunction:
    """``h(x, y) = 1{y == value}``."""
    if value not in (0, 1):
        raise ShiftLabError(f"label value must be 0 or 1, got {value}")

    def indicator(covariates: CovariateBlock, y: IntArray) -> FloatArray:
        return (np.asarray(y) == value).astype(np.float64)

    return indicator


def _evaluate(h: TargetFunction, covariates: CovariateBlock, y: IntArray) -> FloatArray:
    values = np.asarray(h(covariates, y), dtype=np.float64).reshape(-1)
    if values.size != covariates.n:
        raise DimensionMismatchError(f"h returned {values.size} values for {covariates.n} rows")
    if not np.all(np.isfinite(values)):
        raise NumericRangeError("h returned non-finite values")
    return values


def estimate_iw(
    h: TargetFunction,
    source: LabeledBlock | Sequence[SourceSample],
    theta: TiltParams,
) -> FunctionalEstimate:
    """Importance-weighted estimate ``(1/n1) sum h(x_i, y_i) w(x_i, y_i; theta)``.

    Parameters
    ----------
    h : callable
        Vectorized target function
    source : LabeledBlock or sequence of SourceSample
        Labeled source observations
    theta : TiltParams
        Tilt parameters

    Returns
    -------
    FunctionalEstimate
        Estimate with ``n_used = n1``
    """
    labeled = source if isinstance(source, LabeledBlock) else LabeledBlock.from_samples(source)
    values = _evaluate(h, labeled.covariates, labeled.y)
    weights = joint_weight(labeled.covariates.x1, labeled.y, theta)
    total = math.fsum(values * weights)
    return FunctionalEstimate(total / labeled.n, EstimatorMethod.IW, labeled.n)


def estimate_reg(
    h: TargetFunction,
    target: CovariateBlock | Sequence[CovariateVector],
    theta: TiltParams,
    xi: OutcomeModelParams,
) -> FunctionalEstimate:
    """Regression-type estimate ``(1/n0) sum [h(x,1) H(x) + h(x,0) (1 - H(x))]``.

    Computed as ``h(x,0) + H(x) (h(x,1) - h(x,0))`` so that a constant ``h``
    returns that constant exactly.
    """
    block = target if isinstance(target, CovariateBlock) else CovariateBlock.from_vectors(target)
    ones = np.ones(block.n, dtype=np.int64)
    h1 = _evaluate(h, block, ones)
    h0 = _evaluate(h, block, np.zeros(block.n, dtype=np.int64))
    posterior = target_posterior(block, theta, xi)
    total = math.fsum(h0 + posterior * (h1 - h0))
    return FunctionalEstimate(total / block.n, EstimatorMethod.REG, block.n)


def estimate_target_mean(
    data: PooledDataset,
    theta: TiltParams,
    xi: OutcomeModelParams,
    method: EstimatorMethod | str = EstimatorMethod.REG,
) -> FunctionalEstimate:
    """Estimate the target prevalence ``P_0(Y = 1)`` with either estimator."""
    chosen = EstimatorMethod(method)
    if chosen is EstimatorMethod.IW:
        return estimate_iw(label_value, data.source, theta)
    return estimate_reg(label_value, data.target, theta, xi)


def estimate_functional(
    h: TargetFunction,
    data: PooledDataset,
    theta: TiltParams,
    xi: OutcomeModelParams,
    method: EstimatorMethod | str = EstimatorMethod.REG,
) -> FunctionalEstimate:
    """Dispatch ``h`` to the IW or REG estimator on a pooled dataset."""
    chosen = EstimatorMethod(method)
    if chosen is EstimatorMethod.IW:
        return estimate_iw(h, data.source, theta)
    return estimate_reg(h, data.target, theta, xi)

"""The two-step estimator: outcome model, then tilt, plus bootstrap of anything derived from it."""

from __future__ import annotations

import logging
import warnings
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike

from .core import (
    CovariateBlock,
    FloatArray,
    IntArray,
    OutcomeModelParams,
    PooledDataset,
    TiltParams,
    target_posterior,
)
from .exceptions import ConvergenceError, IdentificationWarning
from .functionals import EstimatorMethod, FunctionalEstimate, estimate_target_mean
from .inference import VectorBootstrap, bootstrap_many
from .outcome_model import (
    LogisticFit,
    LogisticOptions,
    RidgeSelection,
    fit_logistic,
    select_ridge_cv,
)
from .rocauc import DEFAULT_GRID, ClassifierEvaluation, ScoreSpec, evaluate_classifier
from .tilt import (
    IdentificationReport,
    TiltFit,
    TiltOptions,
    check_identification,
    estimate_tilt,
    estimate_tilt_multistart,
)

logger = logging.getLogger(__name__)

StatisticFunction = Callable[["TwoStepFit", PooledDataset], FloatArray]


@dataclass(frozen=True, eq=False)
class TwoStepFit:
    """Fitted outcome model and tilt.

    Attributes
    ----------
    xi : OutcomeModelParams
        Source posterior coefficients
    tilt : TiltFit
        Step-2 result
    outcome : LogisticFit, optional
        Step-1 result; absent when ``xi`` was supplied by the caller
    identification : IdentificationReport, optional
        Diagnostics run before step 2
    ridge : RidgeSelection, optional
        Cross-validation result when a ridge grid was given
    """

    xi: OutcomeModelParams
    tilt: TiltFit
    outcome: LogisticFit | None = None
    identification: IdentificationReport | None = None
    ridge: RidgeSelection | None = None

    @property
    def theta(self) -> TiltParams:
        return self.tilt.theta

    @property
    def converged(self) -> bool:
        outcome_ok = self.outcome is None or self.outcome.converged
        return outcome_ok and self.tilt.converged

    def posterior(self, covariates: CovariateBlock) -> FloatArray:
        """Estimated target posterior ``H(x)`` for each row."""
        return target_posterior(covariates, self.theta, self.xi)

    def predict(self, covariates: CovariateBlock, threshold: float = 0.5) -> IntArray:
        """Plug-in labels: 1 where ``H(x) >= threshold``."""
        return (self.posterior(covariates) >= threshold).astype(np.int64)

    def target_mean(
        self, data: PooledDataset, method: EstimatorMethod | str = EstimatorMethod.REG
    ) -> FunctionalEstimate:
        return estimate_target_mean(data, self.theta, self.xi, method)

    def evaluate_classifier(
        self, data: PooledDataset, score: ScoreSpec, grid: ArrayLike = DEFAULT_GRID
    ) -> ClassifierEvaluation:
        return evaluate_classifier(data, self.theta, self.xi, score, grid)


@dataclass(frozen=True, eq=False)
class TwoStepEstimator:
    """Configuration of the two-step procedure.

    Parameters
    ----------
    outcome_options : LogisticOptions
        Step-1 solver settings
    tilt_options : TiltOptions
        Step-2 optimizer settings
    ridge_grid : sequence of float, optional
        When given, step 1 picks its penalty from this grid by k-fold CV
    folds : int, default 5
        Number of CV folds
    seed : int, default 0
        Seed for the CV partition and extra tilt starts
    starts : int, default 1
        Tilt starting points
    variation_tol : float, default 1e-6
        Within-group variance threshold of the instrument diagnostic
    snap_decimals : int, optional
        Rounding of group features before the identification checks
    diagnose : bool, default True
        Run identification checks and emit ``IdentificationWarning`` on failure
    """

    outcome_options: LogisticOptions = field(default_factory=LogisticOptions)
    tilt_options: TiltOptions = field(default_factory=TiltOptions)
    ridge_grid: Sequence[float] | None = None
    folds: int = 5
    seed: int = 0
    starts: int = 1
    variation_tol: float = 1e-6
    snap_decimals: int | None = None
    diagnose: bool = True

    def fit_outcome(self, data: PooledDataset) -> tuple[LogisticFit, RidgeSelection | None]:
        if self.ridge_grid:
            selection = select_ridge_cv(
                data.source, self.ridge_grid, self.folds, self.seed, self.outcome_options
            )
            return selection.fit, selection
        return fit_logistic(data.source, self.outcome_options), None

    def fit(self, data: PooledDataset, xi: OutcomeModelParams | None = None) -> TwoStepFit:
        """Run both steps on ``data``.

        Parameters
        ----------
        data : PooledDataset
            Labeled source rows and unlabeled target rows
        xi : OutcomeModelParams, optional
            Hold the outcome model fixed at these coefficients instead of fitting it

        Returns
        -------
        TwoStepFit
            Both fits and the identification report
        """
        outcome: LogisticFit | None = None
        ridge: RidgeSelection | None = None
        if xi is None:
            outcome, ridge = self.fit_outcome(data)
            xi = outcome.params

        report = None
        if self.diagnose:
            report = check_identification(data, xi, self.variation_tol, self.snap_decimals)
            if not report.passed:
                warnings.warn(
                    "identification checks failed: " + "; ".join(report.messages),
                    IdentificationWarning,
                    stacklevel=2,
                )

        if self.starts > 1:
            tilt = estimate_tilt_multistart(
                data, xi, self.starts, self.seed, self.tilt_options, diagnose=False
            )
        else:
            tilt = estimate_tilt(data, xi, self.tilt_options, diagnose=False)
        logger.info("two-step fit on n1=%d n0=%d: converged=%s", data.n1, data.n0, tilt.converged)
        return TwoStepFit(xi, tilt, outcome, report, ridge)

    def for_replicates(self, fit: TwoStepFit) -> TwoStepEstimator:
        """Settings for refits on resampled data: no diagnostics, CV penalty frozen."""
        options = self.outcome_options
        if fit.ridge is not None:
            options = replace(options, penalty=fit.ridge.penalty)
        return replace(self, outcome_options=options, ridge_grid=None, diagnose=False)


def mean_statistic(method: EstimatorMethod | str = EstimatorMethod.REG) -> StatisticFunction:
    """Statistic vector ``[mu_hat]`` for ``bootstrap_fit``."""

    def statistic(fit: TwoStepFit, data: PooledDataset) -> FloatArray:
        return np.array([fit.target_mean(data, method).value])

    return statistic


def classifier_statistic(score: ScoreSpec, grid: ArrayLike = DEFAULT_GRID) -> StatisticFunction:
    """Statistic vector ``[auc, roc(u_1), ..., roc(u_k)]`` for ``bootstrap_fit``."""

    def statistic(fit: TwoStepFit, data: PooledDataset) -> FloatArray:
        evaluation = fit.evaluate_classifier(data, score, grid)
        return np.concatenate([[evaluation.auc], evaluation.curve.values])

    return statistic


def bootstrap_fit(
    data: PooledDataset,
    estimator: TwoStepEstimator,
    statistic: StatisticFunction,
    B: int = 500,
    level: float = 0.95,
    seed: int = 0,
    threads: int = 1,
    refit_outcome: bool = True,
    fit: TwoStepFit | None = None,
    quiet: bool = True,
    stream: Sequence[int] = (),
) -> VectorBootstrap:
    """Bootstrap a statistic of the two-step fit, refitting inside every replicate.

    Parameters
    ----------
    data : PooledDataset
        Original data
    estimator : TwoStepEstimator
        Settings of the fits
    statistic : callable
        ``statistic(fit, data)`` returning a vector
    B, level, seed, threads
        As in ``bootstrap_many``
    refit_outcome : bool, default True
        Refit the outcome model per replicate; otherwise hold it at the
        full-data estimate and refit only the tilt
    fit : TwoStepFit, optional
        Full-data fit, computed when absent
    quiet, stream
        Passed to ``bootstrap_many``

    Returns
    -------
    VectorBootstrap
        Point estimate from the full-data fit and percentile intervals.
        Replicates whose refit does not converge count as failures.
    """
    base = fit or estimator.fit(data)
    point = statistic(base, data)
    inner = estimator.for_replicates(base)
    fixed_xi = None if refit_outcome else base.xi

    def evaluate(source_idx: IntArray, target_idx: IntArray) -> FloatArray:
        resampled = data.take(source_idx, target_idx)
        refit = inner.fit(resampled, fixed_xi)
        if not refit.converged:
            raise ConvergenceError("replicate refit did not converge")
        return statistic(refit, resampled)

    return bootstrap_many(
        data.n1, data.n0, evaluate, point, B, level, seed, threads, quiet, stream
    )

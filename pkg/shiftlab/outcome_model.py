"""Step 1: the source outcome model ``g(x; xi)`` fitted by (weighted, ridge) logistic regression.

The fitter is a Newton/IRLS loop with step-halving. The ridge penalty never
touches the intercept and, unless ``standardize=True``, applies to raw-scale
slopes, so its strength depends on the units of each column.
"""

from __future__ import annotations

import logging
import warnings
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike
from scipy import linalg
from scipy.special import expit
from sklearn.model_selection import KFold

from .core import EPSILON, FloatArray, LabeledBlock, OutcomeModelParams, SourceSample
from .exceptions import (
    ConvergenceWarning,
    DegenerateLabelsError,
    DimensionMismatchError,
    SeparationWarning,
    ShiftLabError,
    SingularSystemError,
)

logger = logging.getLogger(__name__)

#: Linear-predictor magnitude above which an unpenalized fit is flagged as (quasi-)separated.
SEPARATION_THRESHOLD = 30.0

_MAX_HALVINGS = 40


@dataclass(frozen=True)
class LogisticOptions:
    """Solver settings for the logistic fits.

    Parameters
    ----------
    tolerance : float, default 1e-8
        Convergence threshold on the max-norm of the objective gradient
    max_iterations : int, default 100
        Maximum number of Newton steps
    penalty : float, default 0.0
        Ridge strength ``lambda`` on the slopes (the intercept is never penalized)
    standardize : bool, default False
        Fit on centered, unit-variance columns and map the coefficients back
        to the raw scale; the penalty then acts on standardized slopes
    """

    tolerance: float = 1e-8
    max_iterations: int = 100
    penalty: float = 0.0
    standardize: bool = False

    def __post_init__(self) -> None:
        if not self.tolerance > 0:
            raise ShiftLabError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ShiftLabError(f"max_iterations must be at least 1, got {self.max_iterations}")
        if not (np.isfinite(self.penalty) and self.penalty >= 0):
            raise ShiftLabError(f"penalty must be a nonnegative number, got {self.penalty}")


@dataclass(frozen=True, eq=False)
class LogisticFit:
    """Result of a logistic fit.

    ``final_gradient_norm`` is measured on the scale the solver worked on
    (standardized columns when ``standardize=True``).
    """

    params: OutcomeModelParams
    converged: bool
    iterations: int
    final_gradient_norm: float
    penalty: float
    possible_separation: bool = False
    objective: float = float("nan")


@dataclass(frozen=True, eq=False)
class RidgeSelection:
    """Outcome of ``select_ridge_cv``: chosen penalty, refit, and per-grid CV losses."""

    penalty: float
    fit: LogisticFit
    grid: tuple[float, ...]
    cv_losses: tuple[float, ...] = field(default_factory=tuple)


def _as_labeled(source: LabeledBlock | Sequence[SourceSample]) -> LabeledBlock:
    if isinstance(source, LabeledBlock):
        return source
    return LabeledBlock.from_samples(source)


def _with_intercept(design: FloatArray) -> FloatArray:
    return np.column_stack([np.ones(design.shape[0]), design])


def penalized_loglik(
    coefficients: ArrayLike,
    design: FloatArray,
    y: ArrayLike,
    weights: ArrayLike | None = None,
    penalty: float = 0.0,
) -> float:
    """Weighted Bernoulli log-likelihood minus ``penalty / 2 * ||slopes||^2``.

    Parameters
    ----------
    coefficients : array_like
        ``(xi0, xi1...)``
    design : ndarray, shape (n, p)
        Covariate matrix without an intercept column
    y : array_like
        Binary labels
    weights : array_like, optional
        Positive observation weights, all 1 by default
    penalty : float, default 0.0
        Ridge strength on the slopes

    Returns
    -------
    float
        The objective value
    """
    beta = np.asarray(coefficients, dtype=np.float64)
    labels = np.asarray(y, dtype=np.float64)
    w = np.ones_like(labels) if weights is None else np.asarray(weights, dtype=np.float64)
    eta = beta[0] + design @ beta[1:]
    loglik = float(np.sum(w * (labels * eta - np.logaddexp(0.0, eta))))
    return loglik - 0.5 * penalty * float(beta[1:] @ beta[1:])


def penalized_score(
    coefficients: ArrayLike,
    design: FloatArray,
    y: ArrayLike,
    weights: ArrayLike | None = None,
    penalty: float = 0.0,
) -> FloatArray:
    """Gradient of ``penalized_loglik`` with respect to ``(xi0, xi1...)``."""
    beta = np.asarray(coefficients, dtype=np.float64)
    labels = np.asarray(y, dtype=np.float64)
    w = np.ones_like(labels) if weights is None else np.asarray(weights, dtype=np.float64)
    residual = w * (labels - expit(beta[0] + design @ beta[1:]))
    score: FloatArray = _with_intercept(design).T @ residual
    score[1:] -= penalty * beta[1:]
    return score


def _check_inputs(design: FloatArray, y: FloatArray, weights: FloatArray, penalty: float) -> None:
    if y.shape != (design.shape[0],) or weights.shape != y.shape:
        raise DimensionMismatchError(
            f"design has {design.shape[0]} rows, labels {y.size}, weights {weights.size}"
        )
    if design.shape[0] < 1:
        raise ShiftLabError("cannot fit a logistic model to zero observations")
    if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        raise ShiftLabError("observation weights must be finite and positive")
    if penalty == 0 and (np.all(y == 1) or np.all(y == 0)):
        raise DegenerateLabelsError(
            f"all {y.size} labels equal {int(y[0])}; the unpenalized MLE diverges. "
            "Provide both classes or set a positive ridge penalty."
        )
    if penalty == 0:
        full = _with_intercept(design)
        if np.linalg.matrix_rank(full) < full.shape[1]:
            raise SingularSystemError(
                f"design matrix with intercept has rank {np.linalg.matrix_rank(full)} "
                f"< {full.shape[1]} columns; drop collinear columns or set a ridge penalty"
            )


def _newton_direction(hessian: FloatArray, score: FloatArray) -> FloatArray:
    try:
        direction: FloatArray = linalg.solve(hessian, score, assume_a="pos")
    except linalg.LinAlgError:
        # Vanishing IRLS weights under separation make the Hessian numerically singular.
        direction = linalg.lstsq(hessian, score)[0]
    return direction


def _irls(
    design: FloatArray,
    y: FloatArray,
    weights: FloatArray,
    options: LogisticOptions,
) -> tuple[FloatArray, bool, int, float, bool, float]:
    full = _with_intercept(design)
    penalty = options.penalty
    mask = np.ones(full.shape[1])
    mask[0] = 0.0

    beta = np.zeros(full.shape[1])
    mean_y = float(np.clip(np.average(y, weights=weights), 1e-6, 1 - 1e-6))
    beta[0] = np.log(mean_y / (1.0 - mean_y))

    objective = penalized_loglik(beta, design, y, weights, penalty)
    separation = False
    converged = False
    iterations = 0
    grad_norm = float("inf")

    while True:
        eta = full @ beta
        mu = expit(eta)
        score = full.T @ (weights * (y - mu)) - penalty * mask * beta
        grad_norm = float(np.max(np.abs(score)))
        if penalty == 0 and float(np.max(np.abs(eta))) > SEPARATION_THRESHOLD:
            separation = True
        logger.debug(
            "IRLS iteration %d: objective=%.12g gradient=%.3e", iterations, objective, grad_norm
        )
        if grad_norm <= options.tolerance:
            converged = True
            break
        if iterations >= options.max_iterations:
            break

        curvature = weights * mu * (1.0 - mu)
        hessian = full.T @ (full * curvature[:, None]) + penalty * np.diag(mask)
        direction = _newton_direction(hessian, score)

        noise = 64.0 * np.finfo(np.float64).eps * max(1.0, abs(objective))
        step = 1.0
        for _ in range(_MAX_HALVINGS):
            candidate = beta + step * direction
            candidate_objective = penalized_loglik(candidate, design, y, weights, penalty)
            if np.isfinite(candidate_objective) and candidate_objective >= objective - noise:
                break
            step *= 0.5
        else:
            logger.debug("step-halving exhausted at iteration %d", iterations)
            iterations += 1
            break
        beta = candidate
        objective = candidate_objective
        iterations += 1

    return beta, converged, iterations, grad_norm, separation, objective


def fit_logistic_design(
    design: ArrayLike,
    y: ArrayLike,
    weights: ArrayLike | None = None,
    options: LogisticOptions | None = None,
) -> LogisticFit:
    """Fit a logistic model to a raw design matrix.

    Parameters
    ----------
    design : array_like, shape (n, p)
        Covariates without an intercept column; ``p`` may be 0
    y : array_like
        Binary labels
    weights : array_like, optional
        Positive observation weights
    options : LogisticOptions, optional
        Solver settings

    Returns
    -------
    LogisticFit
        Coefficients on the raw scale of ``design``

    Raises
    ------
    DegenerateLabelsError
        If all labels are identical and ``penalty == 0``
    SingularSystemError
        If the design is collinear and ``penalty == 0``
    """
    opts = options or LogisticOptions()
    matrix = np.asarray(design, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    labels = np.asarray(y, dtype=np.float64).reshape(-1)
    w = np.ones_like(labels) if weights is None else np.asarray(weights, dtype=np.float64)
    _check_inputs(matrix, labels, w, opts.penalty)

    if opts.standardize and matrix.shape[1]:
        center = matrix.mean(axis=0)
        scale = matrix.std(axis=0)
        scale[scale == 0] = 1.0
        working = (matrix - center) / scale
    else:
        center = np.zeros(matrix.shape[1])
        scale = np.ones(matrix.shape[1])
        working = matrix

    beta, converged, iterations, grad_norm, separation, objective = _irls(
        working, labels, w, opts
    )
    slopes = beta[1:] / scale
    intercept = beta[0] - float(slopes @ center)
    params = OutcomeModelParams(intercept, slopes)

    if separation:
        warnings.warn(
            "linear predictor exceeded "
            f"{SEPARATION_THRESHOLD:g} in an unpenalized fit; the data may be "
            "(quasi-)separated. Consider a ridge penalty.",
            SeparationWarning,
            stacklevel=2,
        )
    if not converged:
        warnings.warn(
            f"logistic fit stopped after {iterations} iterations with gradient "
            f"norm {grad_norm:.3e} > {opts.tolerance:g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    logger.info(
        "logistic fit: n=%d p=%d penalty=%g converged=%s iterations=%d",
        matrix.shape[0],
        matrix.shape[1],
        opts.penalty,
        converged,
        iterations,
    )
    return LogisticFit(
        params=params,
        converged=converged,
        iterations=iterations,
        final_gradient_norm=grad_norm,
        penalty=opts.penalty,
        possible_separation=separation,
        objective=objective,
    )


def fit_logistic(
    source: LabeledBlock | Sequence[SourceSample], options: LogisticOptions | None = None
) -> LogisticFit:
    """Fit the source posterior ``g(x; xi)`` by (ridge) maximum likelihood.

    Parameters
    ----------
    source : LabeledBlock or sequence of SourceSample
        Labeled source observations
    options : LogisticOptions, optional
        Solver settings

    Returns
    -------
    LogisticFit
        Coefficients over the columns ``[x1, x2]``
    """
    labeled = _as_labeled(source)
    return fit_logistic_design(labeled.covariates.design(), labeled.y, None, options)


def fit_logistic_weighted(
    source: LabeledBlock | Sequence[SourceSample],
    weights: ArrayLike,
    options: LogisticOptions | None = None,
) -> LogisticFit:
    """Fit the logistic model maximizing a weighted log-likelihood over the source sample."""
    labeled = _as_labeled(source)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != labeled.n:
        raise DimensionMismatchError(f"expected {labeled.n} weights, got {w.size}")
    return fit_logistic_design(labeled.covariates.design(), labeled.y, w, options)


def heldout_nll(params: OutcomeModelParams, design: FloatArray, y: FloatArray) -> float:
    """Mean negative log-likelihood of ``params`` on held-out rows, with clipped probabilities."""
    g = np.clip(expit(params.xi0 + design @ params.xi1), EPSILON, 1.0 - EPSILON)
    return float(-np.mean(y * np.log(g) + (1.0 - y) * np.log1p(-g)))


def select_ridge_cv(
    source: LabeledBlock | Sequence[SourceSample],
    lambda_grid: Sequence[float],
    folds: int = 5,
    seed: int = 0,
    options: LogisticOptions | None = None,
    threads: int = 1,
) -> RidgeSelection:
    """Choose the ridge penalty by seeded k-fold cross-validation.

    The held-out negative log-likelihood is averaged over all rows; the grid
    value with the smallest loss wins and ties go to the larger penalty. A
    fold whose fit raises contributes an infinite loss for that penalty.

    Parameters
    ----------
    source : LabeledBlock or sequence of SourceSample
        Labeled source observations
    lambda_grid : sequence of float
        Candidate penalties (nonnegative)
    folds : int, default 5
        Number of folds ``k >= 2``
    seed : int, default 0
        Seed of the shuffled fold partition
    options : LogisticOptions, optional
        Base solver settings; ``penalty`` is overridden per grid value
    threads : int, default 1
        Folds evaluated concurrently; results are reduced in fold order

    Returns
    -------
    RidgeSelection
        The chosen penalty and the fit on all rows at that penalty
    """
    labeled = _as_labeled(source)
    grid = tuple(float(value) for value in lambda_grid)
    if not grid:
        raise ShiftLabError("lambda grid is empty")
    if any(not np.isfinite(value) or value < 0 for value in grid):
        raise ShiftLabError(f"lambda grid must hold nonnegative numbers, got {grid}")
    if folds < 2 or labeled.n < folds:
        raise ShiftLabError(f"need 2 <= folds <= n1, got folds={folds}, n1={labeled.n}")

    base = options or LogisticOptions()
    design = labeled.covariates.design()
    y = labeled.y.astype(np.float64)
    splits = list(KFold(n_splits=folds, shuffle=True, random_state=seed).split(design))

    def fold_loss(penalty: float, train: np.ndarray, held_out: np.ndarray) -> float:
        fold_options = LogisticOptions(
            base.tolerance, base.max_iterations, penalty, base.standardize
        )
        try:
            fit = fit_logistic_design(design[train], y[train], None, fold_options)
        except ShiftLabError as exc:
            logger.debug("CV fold failed at penalty %g: %s", penalty, exc)
            return float("inf")
        return heldout_nll(fit.params, design[held_out], y[held_out]) * held_out.size

    losses = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        warnings.simplefilter("ignore", SeparationWarning)
        for penalty in grid:
            with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
                per_fold = list(pool.map(lambda split: fold_loss(penalty, *split), splits))
            losses.append(float(np.sum(per_fold)) / labeled.n)
            logger.info("ridge CV: penalty=%g loss=%.6f", penalty, losses[-1])

    best = min(losses)
    if not np.isfinite(best):
        raise ShiftLabError("every ridge penalty failed in cross-validation")
    chosen = max(penalty for penalty, loss in zip(grid, losses) if loss == best)
    final_options = LogisticOptions(base.tolerance, base.max_iterations, chosen, base.standardize)
    fit = fit_logistic_design(design, y, None, final_options)
    return RidgeSelection(penalty=chosen, fit=fit, grid=grid, cv_losses=tuple(losses))

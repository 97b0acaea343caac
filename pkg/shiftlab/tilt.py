"""Step 2: estimation of the tilt parameters and identification diagnostics.

Given the fitted source posterior, the tilt ``theta`` maximizes the
conditional likelihood of the domain indicators over the pooled sample::

    sum_{target} log w(x_j) - sum_{pooled} log(n1 + n0 * w(x_i))

Sums are taken with ``math.fsum`` so values do not depend on row order.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import expit

from . import streams
from .core import (
    EPSILON,
    CovariateBlock,
    FloatArray,
    OutcomeModelParams,
    PooledDataset,
    TiltParams,
    source_posterior_array,
    tilt_predictors,
)
from .exceptions import (
    ConvergenceWarning,
    DimensionMismatchError,
    IdentificationWarning,
    NumericRangeError,
    ShiftLabError,
)

logger = logging.getLogger(__name__)

_ARMIJO = 1e-4
_MAX_BACKTRACKS = 60


@dataclass(frozen=True, eq=False)
class TiltOptions:
    """Settings for the tilt optimizer.

    Parameters
    ----------
    tolerance : float, default 1e-8
        Convergence threshold on the max-norm of the gradient
    max_iterations : int, default 500
        Maximum number of quasi-Newton iterations
    initial_theta : TiltParams, optional
        Starting point; the no-shift model ``theta = 0`` by default
    memory : int, default 10
        Number of curvature pairs kept by the limited-memory update
    """

    tolerance: float = 1e-8
    max_iterations: int = 500
    initial_theta: TiltParams | None = None
    memory: int = 10

    def __post_init__(self) -> None:
        if not self.tolerance > 0:
            raise ShiftLabError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1 or self.memory < 1:
            raise ShiftLabError("max_iterations and memory must be at least 1")


@dataclass(frozen=True)
class IdentificationReport:
    """Finite-sample diagnostics for identifiability of the tilt.

    Attributes
    ----------
    rank_ok : bool
        The rows ``(1, t_k)`` over distinct observed group values have rank ``d + 1``
    distinct_x1_points : int
        Number of distinct group values
    instrument_ok : bool
        The groups in which the fitted posterior varies with ``x2`` themselves
        span an affine space of dimension ``d``
    overlap_ok : bool
        The fitted posterior stays strictly inside the clipping bounds
    messages : tuple of str
        One explanation per failed check
    """

    rank_ok: bool
    distinct_x1_points: int
    instrument_ok: bool
    overlap_ok: bool
    messages: tuple[str, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return self.rank_ok and self.instrument_ok and self.overlap_ok


@dataclass(frozen=True, eq=False)
class TiltFit:
    """Result of ``estimate_tilt``."""

    theta: TiltParams
    converged: bool
    iterations: int
    final_gradient_norm: float
    objective_value: float
    identification: IdentificationReport | None = None


class _Problem:
    """Pooled-sample pieces of the conditional likelihood that do not depend on theta."""

    def __init__(self, data: PooledDataset, xi: OutcomeModelParams) -> None:
        self.d = data.d
        self.x1_source = data.source.covariates.x1
        self.x1_target = data.target.x1
        self.g_source = source_posterior_array(data.source.covariates, xi)
        self.g_target = source_posterior_array(data.target, xi)
        self.log_rho = math.log(data.n0) - math.log(data.n1)
        self.log_n0 = math.log(data.n0)
        self.log_n1 = math.log(data.n1)

    def _check(self, theta: TiltParams) -> None:
        if theta.d != self.d:
            raise DimensionMismatchError(
                f"tilt parameters have d={theta.d} but the data have d={self.d}"
            )

    @staticmethod
    def _log_weight(
        x1: FloatArray, g: FloatArray, theta: TiltParams
    ) -> tuple[FloatArray, FloatArray]:
        eta0, eta1 = tilt_predictors(x1, theta)
        shift = np.maximum(eta0, eta1)
        scaled0 = np.exp(eta0 - shift) * (1.0 - g)
        scaled1 = np.exp(eta1 - shift) * g
        scaled = scaled0 + scaled1
        log_w = shift + np.log(scaled)
        if not np.all(np.isfinite(log_w)):
            raise NumericRangeError("log density ratio is not finite; the tilt diverged")
        return log_w, scaled1 / scaled

    def value(self, theta: TiltParams) -> float:
        self._check(theta)
        log_w_source, _ = self._log_weight(self.x1_source, self.g_source, theta)
        log_w_target, _ = self._log_weight(self.x1_target, self.g_target, theta)
        pooled_source = np.logaddexp(self.log_n1, self.log_n0 + log_w_source)
        pooled_target = np.logaddexp(self.log_n1, self.log_n0 + log_w_target)
        return math.fsum(log_w_target) - (math.fsum(pooled_source) + math.fsum(pooled_target))

    def gradient_terms(self, x1: FloatArray, posterior: FloatArray) -> FloatArray:
        complement = 1.0 - posterior
        return np.column_stack(
            [complement, complement[:, None] * x1, posterior, posterior[:, None] * x1]
        )

    def value_and_gradient(self, theta: TiltParams) -> tuple[float, FloatArray]:
        self._check(theta)
        log_w_source, h_source = self._log_weight(self.x1_source, self.g_source, theta)
        log_w_target, h_target = self._log_weight(self.x1_target, self.g_target, theta)
        pooled_source = np.logaddexp(self.log_n1, self.log_n0 + log_w_source)
        pooled_target = np.logaddexp(self.log_n1, self.log_n0 + log_w_target)
        value = math.fsum(log_w_target) - (math.fsum(pooled_source) + math.fsum(pooled_target))

        # d log(n1 + n0 w) = s * d log w with s = n0 w / (n1 + n0 w)
        share_source = expit(self.log_rho + log_w_source)
        share_target = expit(self.log_rho + log_w_target)
        terms_source = self.gradient_terms(self.x1_source, h_source)
        terms_target = self.gradient_terms(self.x1_target, h_target)
        weighted_source = share_source[:, None] * terms_source
        weighted_target = share_target[:, None] * terms_target
        gradient = np.array(
            [
                math.fsum(terms_target[:, k])
                - (math.fsum(weighted_source[:, k]) + math.fsum(weighted_target[:, k]))
                for k in range(terms_target.shape[1])
            ]
        )
        return value, gradient


def conditional_loglik(theta: TiltParams, data: PooledDataset, xi: OutcomeModelParams) -> float:
    """Conditional log-likelihood of the domain indicators at ``theta``.

    Parameters
    ----------
    theta : TiltParams
        Tilt parameters
    data : PooledDataset
        Source and target samples
    xi : OutcomeModelParams
        Fitted source posterior

    Returns
    -------
    float
        ``sum_target log w - sum_pooled log(n1 + n0 w)``, evaluated in log space

    Raises
    ------
    NumericRangeError
        If a log weight is not finite
    """
    return _Problem(data, xi).value(theta)


def conditional_loglik_grad(
    theta: TiltParams, data: PooledDataset, xi: OutcomeModelParams
) -> FloatArray:
    """Analytic gradient of ``conditional_loglik``, ordered ``(alpha0, beta0, alpha1, beta1)``."""
    return _Problem(data, xi).value_and_gradient(theta)[1]


def _two_loop(
    gradient: FloatArray, pairs: deque[tuple[FloatArray, FloatArray, float]]
) -> FloatArray:
    q = gradient.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s_last, y_last, _ = pairs[-1]
    q *= float(s_last @ y_last) / float(y_last @ y_last)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def _maximize(
    problem: _Problem, start: FloatArray, options: TiltOptions
) -> tuple[FloatArray, float, FloatArray, bool, int]:
    """Limited-memory quasi-Newton ascent with noise-tolerant Armijo backtracking."""

    def evaluate(vector: FloatArray) -> tuple[float, FloatArray]:
        value, gradient = problem.value_and_gradient(TiltParams.from_vector(vector))
        # Minimize the negated objective.
        return -value, -gradient

    x = start.copy()
    f, g = evaluate(x)
    pairs: deque[tuple[FloatArray, FloatArray, float]] = deque(maxlen=options.memory)
    converged = False
    iteration = 0

    while True:
        grad_norm = float(np.max(np.abs(g)))
        if grad_norm <= options.tolerance:
            converged = True
            break
        if iteration >= options.max_iterations:
            break

        direction = -_two_loop(g, pairs) if pairs else -g / max(1.0, grad_norm)
        slope = float(g @ direction)
        if slope >= 0:
            pairs.clear()
            direction = -g / max(1.0, grad_norm)
            slope = float(g @ direction)

        noise = 64.0 * np.finfo(np.float64).eps * max(1.0, abs(f))
        step = 1.0
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            candidate = x + step * direction
            try:
                f_new, g_new = evaluate(candidate)
            except NumericRangeError:
                step *= 0.5
                continue
            if f_new <= f + _ARMIJO * step * slope + noise:
                accepted = True
                break
            step *= 0.5

        if not accepted:
            if pairs:
                logger.debug("line search failed at iteration %d; resetting memory", iteration)
                pairs.clear()
                iteration += 1
                continue
            logger.debug("steepest-ascent line search failed at iteration %d", iteration)
            break

        s = candidate - x
        y = g_new - g
        curvature = float(s @ y)
        if curvature > 0:
            pairs.append((s, y, 1.0 / curvature))
        x, f, g = candidate, f_new, g_new
        iteration += 1
        logger.debug(
            "tilt iteration %d: objective=%.12g gradient=%.3e",
            iteration,
            -f,
            float(np.max(np.abs(g))),
        )

    return x, -f, -g, converged, iteration


def _fit_from(problem: _Problem, initial: TiltParams, options: TiltOptions) -> TiltFit:
    if initial.d != problem.d:
        raise DimensionMismatchError(
            f"initial theta has d={initial.d}, data have d={problem.d}"
        )
    vector, value, gradient, converged, iterations = _maximize(
        problem, initial.as_vector(), options
    )
    return TiltFit(
        theta=TiltParams.from_vector(vector),
        converged=converged,
        iterations=iterations,
        final_gradient_norm=float(np.max(np.abs(gradient))),
        objective_value=value,
    )


def _finish(
    fit: TiltFit, report: IdentificationReport | None, tolerance: float
) -> TiltFit:
    if not fit.converged:
        warnings.warn(
            f"tilt estimation stopped after {fit.iterations} iterations with gradient "
            f"norm {fit.final_gradient_norm:.3e} > {tolerance:g}",
            ConvergenceWarning,
            stacklevel=3,
        )
    if report is not None and not report.passed:
        warnings.warn(
            "identification checks failed: " + "; ".join(report.messages),
            IdentificationWarning,
            stacklevel=3,
        )
    logger.info(
        "tilt fit: converged=%s iterations=%d objective=%.6f",
        fit.converged,
        fit.iterations,
        fit.objective_value,
    )
    return TiltFit(
        fit.theta,
        fit.converged,
        fit.iterations,
        fit.final_gradient_norm,
        fit.objective_value,
        report,
    )


def estimate_tilt(
    data: PooledDataset,
    xi: OutcomeModelParams,
    options: TiltOptions | None = None,
    diagnose: bool = True,
) -> TiltFit:
    """Estimate ``theta`` by maximizing the conditional likelihood.

    Parameters
    ----------
    data : PooledDataset
        Source and target samples
    xi : OutcomeModelParams
        Fitted source posterior
    options : TiltOptions, optional
        Optimizer settings
    diagnose : bool, default True
        Run ``check_identification`` and attach the report to the fit

    Returns
    -------
    TiltFit
        The best iterate; ``converged`` is False when the iteration budget ran
        out or the line search stalled above the tolerance
    """
    opts = options or TiltOptions()
    fit = _fit_from(_Problem(data, xi), opts.initial_theta or TiltParams.zeros(data.d), opts)
    report = check_identification(data, xi) if diagnose else None
    return _finish(fit, report, opts.tolerance)


def estimate_tilt_multistart(
    data: PooledDataset,
    xi: OutcomeModelParams,
    starts: int = 1,
    seed: int = 0,
    options: TiltOptions | None = None,
    scale: float = 1.0,
    diagnose: bool = True,
) -> TiltFit:
    """Run the tilt optimizer from several starting points and keep the best.

    Start 0 is ``options.initial_theta`` (or zero); start ``k`` adds seeded
    Gaussian noise of standard deviation ``scale`` to it. Converged fits are
    preferred, then the larger objective; ties keep the earlier start.
    No claim of global optimality is made.
    """
    opts = options or TiltOptions()
    if starts < 1:
        raise ShiftLabError(f"starts must be at least 1, got {starts}")
    problem = _Problem(data, xi)
    base = (opts.initial_theta or TiltParams.zeros(data.d)).as_vector()

    best: TiltFit | None = None
    for k in range(starts):
        vector = base
        if k > 0:
            noise = streams.split(seed, streams.TILT_STARTS, k).standard_normal(base.size)
            vector = base + scale * noise
        try:
            fit = _fit_from(problem, TiltParams.from_vector(vector), opts)
        except NumericRangeError as exc:
            logger.info("tilt start %d diverged: %s", k, exc)
            continue
        logger.info(
            "tilt start %d: objective=%.6f converged=%s", k, fit.objective_value, fit.converged
        )
        if best is None or (fit.converged, fit.objective_value) > (
            best.converged,
            best.objective_value,
        ):
            best = fit
    if best is None:
        raise NumericRangeError("every tilt start diverged")

    report = check_identification(data, xi) if diagnose else None
    return _finish(best, report, opts.tolerance)


def _snap(x1: FloatArray, snap_decimals: int | None) -> FloatArray:
    return x1 if snap_decimals is None else np.round(x1, snap_decimals)


def _affine_rank_ok(points: ArrayLike, d: int) -> bool:
    rows = np.asarray(points, dtype=np.float64).reshape(-1, d)
    if rows.shape[0] < d + 1:
        return False
    return int(np.linalg.matrix_rank(np.column_stack([np.ones(rows.shape[0]), rows]))) == d + 1


def check_identification_covariates(
    covariates: CovariateBlock,
    xi: OutcomeModelParams,
    variation_tol: float = 1e-6,
    snap_decimals: int | None = None,
) -> IdentificationReport:
    """Identification diagnostics over a block of covariates.

    Parameters
    ----------
    covariates : CovariateBlock
        Rows to inspect (typically the pooled sample)
    xi : OutcomeModelParams
        Fitted source posterior
    variation_tol : float, default 1e-6
        Within-group sample variance of the fitted posterior above which a
        group counts as varying in ``x2``
    snap_decimals : int, optional
        Round group features to this many decimals before grouping

    Returns
    -------
    IdentificationReport
        Never raises for failed checks; failures are listed in ``messages``
    """
    d = covariates.d
    x1 = _snap(covariates.x1, snap_decimals)
    groups, inverse = np.unique(x1, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    messages = []

    rank_ok = _affine_rank_ok(groups, d)
    if not rank_ok:
        messages.append(
            f"rank condition fails: {groups.shape[0]} distinct group value(s) do not span "
            f"an affine space of dimension {d}; add groups or drop collinear group columns"
        )

    g = source_posterior_array(covariates, xi)
    counts = np.bincount(inverse, minlength=groups.shape[0]).astype(np.float64)
    means = np.bincount(inverse, weights=g, minlength=groups.shape[0]) / counts
    squares = np.bincount(inverse, weights=(g - means[inverse]) ** 2, minlength=groups.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        variances = np.where(counts > 1, squares / np.maximum(counts - 1, 1), 0.0)
    varying = variances > variation_tol
    instrument_ok = _affine_rank_ok(groups[varying], d)
    if not instrument_ok:
        messages.append(
            f"instrument condition fails: the fitted posterior varies with x2 "
            f"(within-group variance > {variation_tol:g}) in {int(varying.sum())} of "
            f"{groups.shape[0]} groups, which do not span dimension {d}; this is a "
            "finite-sample proxy for x2 affecting the posterior within groups"
        )

    overlap_ok = bool(g.min() > EPSILON and g.max() < 1.0 - EPSILON)
    if not overlap_ok:
        messages.append(
            "overlap condition fails: the fitted posterior hits the clipping bounds "
            f"[{EPSILON:g}, 1 - {EPSILON:g}]; check for separation"
        )

    return IdentificationReport(
        rank_ok=rank_ok,
        distinct_x1_points=int(groups.shape[0]),
        instrument_ok=instrument_ok,
        overlap_ok=overlap_ok,
        messages=tuple(messages),
    )


def check_identification(
    data: PooledDataset,
    xi: OutcomeModelParams,
    variation_tol: float = 1e-6,
    snap_decimals: int | None = None,
) -> IdentificationReport:
    """Identification diagnostics over the pooled source and target covariates."""
    return check_identification_covariates(
        data.pooled_covariates(), xi, variation_tol, snap_decimals
    )

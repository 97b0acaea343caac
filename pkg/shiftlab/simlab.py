"""Monte-Carlo study of the two-step estimator against competing methods.

The data-generating process draws ``(y, x1)`` from a four-cell multinomial
whose probabilities differ between the domains, then non-group features
whose law given ``(y, x1)`` is shared by both domains::

    x21 ~ Normal(gamma1 (x1 - 1), sigma1^2)
    x22 ~ Normal(gamma2 (y - 1),  sigma2^2)
    x23 ~ Bernoulli(0.5)
    x24 ~ Exponential(rate lam)

Cells are ordered ``(y, x1) = (0,0), (0,1), (1,0), (1,1)``. Target labels are
generated for scoring but never reach the estimators, except the oracle.
"""

from __future__ import annotations

import functools
import io
import logging
import math
import warnings
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
import pandas as pd
import yaml
from numpy.typing import ArrayLike
from sklearn.metrics import confusion_matrix

from . import streams
from .core import (
    CovariateBlock,
    FloatArray,
    IntArray,
    LabeledBlock,
    OutcomeModelParams,
    PooledDataset,
    TiltParams,
    joint_weight,
    source_posterior_array,
)
from .exceptions import ShiftLabError, ZeroCellError
from .functionals import EstimatorMethod
from .inference import silence_solver_warnings
from .outcome_model import fit_logistic, fit_logistic_design, fit_logistic_weighted
from .pipeline import TwoStepEstimator, TwoStepFit, bootstrap_fit
from .rocauc import EstimatedPosterior, FixedScore, auc, build_weighted_cdfs, roc_at

logger = logging.getLogger(__name__)

CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))
THETA_NAMES = ("alpha0", "beta0", "alpha1", "beta1")
CLASSIFICATION_METRICS = ("recall", "accuracy", "precision")

PosteriorFunction = Callable[[CovariateBlock], FloatArray]


class Domain(str, Enum):
    SOURCE = "source"
    TARGET = "target"


class Method(str, Enum):
    """Competing ways of estimating the target posterior."""

    PROPOSED = "Proposed"
    REWEIGHT = "Reweight"
    NAIVE = "Naive"
    ORACLE = "Oracle"
    IDEAL = "Ideal"


# -----------------------------------------------------------------------------
# Configuration
# -----------------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the data-generating process and of the study.

    Parameters
    ----------
    pi_source, pi_target : tuple of 4 floats
        Cell probabilities of ``(y, x1)`` in each domain
    gamma : (float, float)
        Location coefficients of ``x21`` and ``x22``
    sigma : (float, float)
        Standard deviations of ``x21`` and ``x22``
    lam : float
        Rate of ``x24``
    n1, n0 : int
        Source and target sample sizes
    reps : int
        Number of replicates
    bootstrap_B : int
        Bootstrap resamples per replicate; 0 skips interval estimation
    seed : int
        Root seed of all replicate streams
    threshold : float
        Classification threshold on the estimated posterior
    level : float
        Confidence level of the bootstrap intervals
    roc_points : tuple of float
        False-positive rates at which ROC values are recorded
    truth_size : int
        Sample size of the Monte-Carlo ground truths
    truth_seed : int
        Seed of the ground-truth sample, independent of ``seed``
    include_ideal : bool
        Add the full-information estimate of theta to the parameter rows
    threads : int
        Replicates run concurrently on this many threads
    """

    pi_source: tuple[float, ...] = (0.1, 0.4, 0.4, 0.1)
    pi_target: tuple[float, ...] = (0.5, 0.1, 0.1, 0.3)
    gamma: tuple[float, ...] = (7.0, -3.0)
    sigma: tuple[float, ...] = (2.0, 2.0)
    lam: float = 1.0
    n1: int = 2000
    n0: int = 2000
    reps: int = 500
    bootstrap_B: int = 500
    seed: int = 0
    threshold: float = 0.5
    level: float = 0.95
    roc_points: tuple[float, ...] = (0.1, 0.2)
    truth_size: int = 1_000_000
    truth_seed: int = 20_240_521
    include_ideal: bool = False
    threads: int = 1

    def __post_init__(self) -> None:
        for name in ("pi_source", "pi_target", "gamma", "sigma", "roc_points"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        for name in ("pi_source", "pi_target"):
            pi = getattr(self, name)
            if len(pi) != 4 or min(pi) < 0 or abs(math.fsum(pi) - 1.0) > 1e-9:
                raise ShiftLabError(f"{name} must be 4 nonnegative probabilities summing to 1")
        if len(self.gamma) != 2 or len(self.sigma) != 2 or min(self.sigma) <= 0:
            raise ShiftLabError("gamma needs 2 values and sigma 2 positive values")
        if not self.lam > 0:
            raise ShiftLabError(f"lam must be positive, got {self.lam}")
        if min(self.n1, self.n0, self.reps, self.truth_size, self.threads) < 1:
            raise ShiftLabError("sample sizes, reps, truth_size and threads must be positive")
        if self.bootstrap_B == 1 or self.bootstrap_B < 0:
            raise ShiftLabError("bootstrap_B must be 0 (no intervals) or at least 2")
        if not (0 < self.threshold < 1 and 0 < self.level < 1):
            raise ShiftLabError("threshold and level must lie in (0, 1)")
        if any(not 0 < u < 1 for u in self.roc_points):
            raise ShiftLabError("roc_points must lie in (0, 1)")

    @classmethod
    def reference_defaults(cls, **overrides: Any) -> SimConfig:
        """The reference design with optional field overrides."""
        return cls.from_mapping(overrides)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> SimConfig:
        """Build from a parsed JSON/YAML document; unknown keys are rejected."""
        values = dict(mapping)
        if "lambda" in values:
            values["lam"] = values.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ShiftLabError(f"unknown simulation settings: {', '.join(unknown)}")
        return cls(**values)

    def truth_config(self) -> SimConfig:
        """This config with every field the ground truths ignore reset."""
        return replace(
            self, n1=1, n0=1, reps=1, bootstrap_B=0, seed=0, include_ideal=False, threads=1
        )


def load_sim_config(path: str | Path, **overrides: Any) -> SimConfig:
    """Read a simulation config from a JSON or YAML file."""
    with open(path, encoding="utf-8") as handle:
        document = yaml.safe_load(handle) or {}
    if not isinstance(document, dict):
        raise ShiftLabError(f"{path}: expected a mapping of simulation settings")
    document.update({key: value for key, value in overrides.items() if value is not None})
    return SimConfig.from_mapping(document)


# -----------------------------------------------------------------------------
# Data generation and closed forms
# -----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimulatedSample:
    covariates: CovariateBlock
    y: IntArray

    def labeled(self) -> LabeledBlock:
        return LabeledBlock(self.covariates, self.y)


@dataclass(frozen=True, eq=False)
class Replicate:
    """One simulated dataset: estimator-facing data plus the quarantined target labels."""

    data: PooledDataset
    target_labels: IntArray


def gen_domain(
    config: SimConfig, domain: Domain | str, n: int, rng: np.random.Generator
) -> SimulatedSample:
    """Draw ``n`` labeled observations from one domain.

    Returns
    -------
    SimulatedSample
        ``x1`` has shape ``(n, 1)`` and ``x2`` columns ``(x21, x22, x23, x24)``
    """
    pi = config.pi_source if Domain(domain) is Domain.SOURCE else config.pi_target
    cells = rng.choice(4, size=n, p=np.asarray(pi))
    y = cells // 2
    x1 = (cells % 2).astype(np.float64)
    x21 = rng.normal(config.gamma[0] * (x1 - 1.0), config.sigma[0])
    x22 = rng.normal(config.gamma[1] * (y - 1.0), config.sigma[1])
    x23 = rng.binomial(1, 0.5, size=n).astype(np.float64)
    x24 = rng.exponential(1.0 / config.lam, size=n)
    covariates = CovariateBlock(x1.reshape(-1, 1), np.column_stack([x21, x22, x23, x24]))
    return SimulatedSample(covariates, y.astype(np.int64))


def gen_replicate(config: SimConfig, replicate: int) -> Replicate:
    rng = streams.split(config.seed, streams.REPLICATE, replicate)
    source = gen_domain(config, Domain.SOURCE, config.n1, rng)
    target = gen_domain(config, Domain.TARGET, config.n0, rng)
    return Replicate(PooledDataset(source.labeled(), target.covariates), target.y)


def _log_cells(pi: Sequence[float], name: str) -> FloatArray:
    if min(pi) <= 0:
        raise ZeroCellError(f"{name} has a zero cell; its log ratio is undefined")
    return np.log(np.asarray(pi, dtype=np.float64))


def true_tilt(config: SimConfig) -> TiltParams:
    """Tilt implied by the two multinomials (the non-group law is shared)."""
    ratio = _log_cells(config.pi_target, "pi_target") - _log_cells(config.pi_source, "pi_source")
    alpha0, alpha1 = ratio[0], ratio[2]
    return TiltParams(alpha0, [ratio[1] - alpha0], alpha1, [ratio[3] - alpha1])


def true_posterior_coefficients(pi: Sequence[float], config: SimConfig) -> OutcomeModelParams:
    """Exact logistic coefficients of ``P(Y=1 | x)`` over ``[x1, x21, x22, x23, x24]``.

    Only ``x1`` and ``x22`` carry information about ``y`` given the cell
    structure; ``x22`` contributes ``(gamma2^2 + 2 gamma2 x22) / (2 sigma2^2)``.
    """
    log_pi = _log_cells(pi, "cell probabilities")
    prior0 = log_pi[2] - log_pi[0]
    prior1 = log_pi[3] - log_pi[1]
    gamma2, sigma2 = config.gamma[1], config.sigma[1]
    xi0 = prior0 + gamma2**2 / (2.0 * sigma2**2)
    return OutcomeModelParams(xi0, [prior1 - prior0, 0.0, gamma2 / sigma2**2, 0.0, 0.0])


def true_source_coefficients(config: SimConfig) -> OutcomeModelParams:
    return true_posterior_coefficients(config.pi_source, config)


def true_source_posterior(config: SimConfig, covariates: CovariateBlock) -> FloatArray:
    return source_posterior_array(covariates, true_source_coefficients(config))


def true_target_posterior(config: SimConfig, covariates: CovariateBlock) -> FloatArray:
    params = true_posterior_coefficients(config.pi_target, config)
    return source_posterior_array(covariates, params)


def true_mean(config: SimConfig) -> float:
    return config.pi_target[2] + config.pi_target[3]


# -----------------------------------------------------------------------------
# Methods and metrics
# -----------------------------------------------------------------------------


class ClassificationMetrics(NamedTuple):
    """Recall, accuracy and precision; ``None`` where a denominator is zero."""

    recall: float | None
    accuracy: float
    precision: float | None


def classification_metrics(predicted: ArrayLike, truth: ArrayLike) -> ClassificationMetrics:
    pred = np.asarray(predicted).reshape(-1)
    true = np.asarray(truth).reshape(-1)
    if pred.shape != true.shape or pred.size == 0:
        raise ShiftLabError(f"need equal nonempty label vectors, got {pred.shape} and {true.shape}")
    tn, fp, fn, tp = confusion_matrix(true, pred, labels=[0, 1]).ravel()
    recall = tp / (tp + fn) if tp + fn else None
    precision = tp / (tp + fp) if tp + fp else None
    accuracy = (tp + tn) / pred.size
    return ClassificationMetrics(
        None if recall is None else float(recall),
        float(accuracy),
        None if precision is None else float(precision),
    )


def ideal_tilt(source: LabeledBlock, target_x1: FloatArray, target_labels: IntArray) -> TiltParams:
    """Saturated full-information estimate of theta from cell frequencies in both domains.

    Requires a single binary group feature.
    """

    def frequencies(x1: FloatArray, y: IntArray) -> FloatArray:
        cell = 2 * np.asarray(y) + np.asarray(x1).reshape(-1).astype(np.int64)
        counts = np.bincount(cell, minlength=4).astype(np.float64)
        if np.any(counts == 0):
            raise ZeroCellError("a (y, x1) cell is empty; the ideal estimate is undefined")
        return counts / counts.sum()

    ratio = np.log(frequencies(target_x1, target_labels)) - np.log(
        frequencies(source.covariates.x1, source.y)
    )
    return TiltParams(ratio[0], [ratio[1] - ratio[0]], ratio[2], [ratio[3] - ratio[2]])


@dataclass(frozen=True, eq=False)
class MethodResult:
    method: Method
    posterior: PosteriorFunction | None
    theta: TiltParams | None = None


def run_method(
    method: Method | str,
    replicate: Replicate,
    estimator: TwoStepEstimator | None = None,
    proposed: TwoStepFit | None = None,
) -> MethodResult:
    """Fit one method on a replicate and return its estimated target posterior.

    Parameters
    ----------
    method : Method
        Which method to run
    replicate : Replicate
        Simulated data; target labels are used by ``ORACLE`` and ``IDEAL`` only
    estimator : TwoStepEstimator, optional
        Settings of the two-step fit
    proposed : TwoStepFit, optional
        An existing two-step fit on ``replicate.data`` to reuse

    Returns
    -------
    MethodResult
        ``posterior`` maps covariates to estimated ``P_0(Y=1 | x)``; it is
        ``None`` for ``IDEAL``, which only estimates theta
    """
    chosen = Method(method)
    data = replicate.data
    if chosen in (Method.PROPOSED, Method.REWEIGHT) and proposed is None:
        proposed = (estimator or TwoStepEstimator()).fit(data)

    if chosen is Method.PROPOSED:
        assert proposed is not None
        return MethodResult(chosen, proposed.posterior, proposed.theta)
    if chosen is Method.REWEIGHT:
        assert proposed is not None
        weights = joint_weight(data.source.covariates.x1, data.source.y, proposed.theta)
        params = fit_logistic_weighted(data.source, weights).params
    elif chosen is Method.NAIVE:
        params = fit_logistic(data.source).params
    elif chosen is Method.ORACLE:
        params = fit_logistic_design(data.target.design(), replicate.target_labels).params
    else:
        theta = ideal_tilt(data.source, data.target.x1, replicate.target_labels)
        return MethodResult(chosen, None, theta)
    return MethodResult(chosen, functools.partial(source_posterior_array, xi=params))


# -----------------------------------------------------------------------------
# Ground truths
# -----------------------------------------------------------------------------


def _metric_names(config: SimConfig) -> tuple[list[str], list[str]]:
    classifier = []
    for score in ("fixed", "estimated"):
        classifier.append(f"auc.{score}")
        classifier.extend(f"roc.{score}@{u:g}" for u in config.roc_points)
    return ["mu.IW", "mu.REG"], classifier


def compute_truths(config: SimConfig) -> dict[str, float]:
    """Ground truths of every reported metric.

    Classification truths are those of the Bayes classifier under the target
    law; AUC/ROC truths are computed on a large target sample weighting each
    point by its true posterior, which removes label noise from the estimate.
    """
    return dict(_truths(config.truth_config()))


@functools.lru_cache(maxsize=8)
def _truths(config: SimConfig) -> tuple[tuple[str, float], ...]:
    truths: dict[str, float] = {}
    theta = true_tilt(config).as_vector()
    truths.update({f"theta.{name}": float(v) for name, v in zip(THETA_NAMES, theta)})
    truths["mu.IW"] = truths["mu.REG"] = true_mean(config)

    rng = streams.split(config.truth_seed, streams.TRUTH)
    sample = gen_domain(config, Domain.TARGET, config.truth_size, rng)
    posterior = true_target_posterior(config, sample.covariates)
    predicted = posterior >= config.threshold
    positive_mass = math.fsum(posterior)
    hit_mass = math.fsum(posterior[predicted])
    truths["recall"] = hit_mass / positive_mass
    truths["accuracy"] = (
        math.fsum(np.where(predicted, posterior, 1.0 - posterior)) / posterior.size
    )
    truths["precision"] = hit_mass / max(int(predicted.sum()), 1)

    scores = {
        "fixed": true_source_posterior(config, sample.covariates),
        "estimated": posterior,
    }
    for name, values in scores.items():
        cdfs = build_weighted_cdfs(values, posterior)
        truths[f"auc.{name}"] = auc(cdfs.f0, cdfs.f1)
        for u in config.roc_points:
            truths[f"roc.{name}@{u:g}"] = roc_at(cdfs.f0, cdfs.f1, u)
    logger.info("computed ground truths on %d target draws", config.truth_size)
    return tuple(truths.items())


# -----------------------------------------------------------------------------
# Study runner
# -----------------------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    replicate: int
    method: str
    metric: str
    value: float
    ci_low: float | None = None
    ci_high: float | None = None


@dataclass(frozen=True)
class MetricsRow:
    """Aggregate of one metric for one method across replicates.

    ``rb_percent`` is ``100 (mean - truth) / truth``; when the truth is 0 it
    holds the absolute bias and ``rb_is_absolute`` is set. ``mse_x1000`` is
    the mean squared error times 1000. ``cp`` and ``al`` are coverage and
    average interval length, absent without intervals or with one replicate.
    """

    method: str
    metric: str
    mean: float
    rb_percent: float
    mse_x1000: float
    cp: float | None
    al: float | None
    truth: float
    n_reps: int
    rb_is_absolute: bool = False


@dataclass(frozen=True)
class MetricsTable:
    rows: tuple[MetricsRow, ...]
    estimates: tuple[Estimate, ...] = field(default_factory=tuple)
    failed_replicates: int = 0

    def to_frame(self) -> pd.DataFrame:
        columns = [f.name for f in fields(MetricsRow)]
        return pd.DataFrame(
            [[getattr(row, c) for c in columns] for row in self.rows], columns=columns
        )

    def raw_frame(self) -> pd.DataFrame:
        """Per-replicate estimates in long format."""
        columns = [f.name for f in fields(Estimate)]
        return pd.DataFrame(
            [[getattr(e, c) for c in columns] for e in self.estimates], columns=columns
        )

    def to_csv(self, path: str | Path | None = None) -> str:
        """Write the table as CSV to ``path`` (if given) and return the text."""
        buffer = io.StringIO()
        self.to_frame().to_csv(buffer, index=False, float_format="%.6g")
        text = buffer.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_text(self) -> str:
        frame = self.to_frame()
        frame["cp"] = frame["cp"].map(lambda v: "-" if pd.isna(v) else f"{100 * v:.1f}")
        frame["al"] = frame["al"].map(lambda v: "-" if pd.isna(v) else f"{v:.3f}")
        frame = frame.rename(
            columns={"rb_percent": "RB(%)", "mse_x1000": "MSE", "cp": "CP(%)", "al": "AL"}
        )
        shown = frame[
            ["method", "metric", "mean", "truth", "RB(%)", "MSE", "CP(%)", "AL", "n_reps"]
        ]
        text = shown.to_string(index=False, float_format=lambda v: f"{v:.4f}")
        if self.failed_replicates:
            text += f"\n\n{self.failed_replicates} replicate(s) failed and were excluded"
        return text

    def row(self, method: str, metric: str) -> MetricsRow:
        for candidate in self.rows:
            if candidate.method == method and candidate.metric == metric:
                return candidate
        raise KeyError(f"no row for {method}/{metric}")


def _study_statistic(
    config: SimConfig, fixed: FixedScore
) -> Callable[[TwoStepFit, PooledDataset], FloatArray]:
    grid = np.asarray(config.roc_points)

    def statistic(fit: TwoStepFit, data: PooledDataset) -> FloatArray:
        values = [
            fit.target_mean(data, EstimatorMethod.IW).value,
            fit.target_mean(data, EstimatorMethod.REG).value,
        ]
        for score in (fixed, EstimatedPosterior()):
            evaluation = fit.evaluate_classifier(data, score, grid)
            values.append(evaluation.auc)
            values.extend(evaluation.curve.values)
        return np.array(values)

    return statistic


def _run_replicate(
    config: SimConfig,
    index: int,
    methods: Sequence[Method],
    estimator: TwoStepEstimator,
) -> list[Estimate]:
    replicate = gen_replicate(config, index)
    data = replicate.data
    proposed = estimator.fit(data)
    estimates: list[Estimate] = []

    for method in methods:
        result = run_method(method, replicate, estimator, proposed)
        if result.theta is not None:
            for name, value in zip(THETA_NAMES, result.theta.as_vector()):
                estimates.append(Estimate(index, method.value, f"theta.{name}", float(value)))
        if result.posterior is None:
            continue
        predicted = (result.posterior(data.target) >= config.threshold).astype(np.int64)
        metrics = classification_metrics(predicted, replicate.target_labels)
        for name in CLASSIFICATION_METRICS:
            value = getattr(metrics, name)
            if value is not None:
                estimates.append(Estimate(index, method.value, name, value))

    fixed = FixedScore(functools.partial(true_source_posterior, config), "fixed")
    statistic = _study_statistic(config, fixed)
    mean_names, classifier_names = _metric_names(config)
    names = mean_names + classifier_names
    if config.bootstrap_B:
        boot = bootstrap_fit(
            data,
            estimator,
            statistic,
            B=config.bootstrap_B,
            level=config.level,
            seed=config.seed,
            fit=proposed,
            quiet=False,
            stream=(index,),
        )
        for k, name in enumerate(names):
            estimates.append(
                Estimate(
                    index,
                    Method.PROPOSED.value,
                    name,
                    float(boot.point[k]),
                    float(boot.ci_low[k]),
                    float(boot.ci_high[k]),
                )
            )
    else:
        point = statistic(proposed, data)
        estimates.extend(
            Estimate(index, Method.PROPOSED.value, name, float(point[k]))
            for k, name in enumerate(names)
        )
    return estimates


def _aggregate(
    method: str, metric: str, items: list[Estimate], truth: float, reps: int
) -> MetricsRow:
    values = np.array([e.value for e in items])
    mean = float(values.mean())
    absolute = truth == 0
    bias = mean - truth
    rb = bias if absolute else 100.0 * bias / truth
    mse = 1000.0 * float(np.mean((values - truth) ** 2))
    cp = al = None
    if reps > 1 and all(e.ci_low is not None for e in items):
        lows = np.array([e.ci_low for e in items], dtype=np.float64)
        highs = np.array([e.ci_high for e in items], dtype=np.float64)
        cp = float(np.mean((lows <= truth) & (truth <= highs)))
        al = float(np.mean(highs - lows))
    return MetricsRow(method, metric, mean, rb, mse, cp, al, truth, len(items), absolute)


def run_study(
    config: SimConfig,
    methods: Sequence[Method | str] | None = None,
    estimator: TwoStepEstimator | None = None,
) -> MetricsTable:
    """Run all replicates and aggregate them into a metrics table.

    Parameters
    ----------
    config : SimConfig
        Design and study settings
    methods : sequence of Method, optional
        Methods to compare; Proposed, Reweight, Naive and Oracle by default,
        plus Ideal when ``config.include_ideal``
    estimator : TwoStepEstimator, optional
        Settings of the two-step fit

    Returns
    -------
    MetricsTable
        Rows ordered by method then metric; identical for any thread count
    """
    chosen = [Method(m) for m in methods] if methods else [
        Method.PROPOSED,
        Method.REWEIGHT,
        Method.NAIVE,
        Method.ORACLE,
    ]
    if config.include_ideal and Method.IDEAL not in chosen:
        chosen.append(Method.IDEAL)
    if Method.PROPOSED not in chosen:
        chosen.insert(0, Method.PROPOSED)
    fitter = estimator or TwoStepEstimator(diagnose=False)
    truths = compute_truths(config)

    def attempt(index: int) -> list[Estimate] | None:
        try:
            return _run_replicate(config, index, chosen, fitter)
        except ShiftLabError as exc:
            logger.warning("replicate %d failed: %s", index, exc)
            return None

    with warnings.catch_warnings():
        silence_solver_warnings()
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(attempt, range(config.reps)))

    estimates = [e for outcome in outcomes if outcome is not None for e in outcome]
    failed = sum(outcome is None for outcome in outcomes)
    logger.info("study finished: %d replicates, %d failed", config.reps, failed)

    grouped: dict[tuple[str, str], list[Estimate]] = {}
    for estimate in estimates:
        grouped.setdefault((estimate.method, estimate.metric), []).append(estimate)
    order = {m.value: i for i, m in enumerate(Method)}
    metric_order = list(truths)
    rows = [
        _aggregate(method, metric, items, truths[metric], config.reps)
        for (method, metric), items in sorted(
            grouped.items(), key=lambda kv: (order[kv[0][0]], metric_order.index(kv[0][1]))
        )
    ]
    return MetricsTable(tuple(rows), tuple(estimates), failed)

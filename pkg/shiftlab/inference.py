"""Stratified nonparametric bootstrap with percentile intervals.

Each replicate resamples the source rows and the target rows independently
with replacement, keeping ``n1`` and ``n0`` fixed. Replicate ``r`` draws its
indices from stream ``(seed, BOOTSTRAP, r)``, so results do not depend on the
thread count.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import streams
from .core import FloatArray, IntArray, PooledDataset
from .exceptions import (
    ConvergenceWarning,
    IdentificationWarning,
    SeparationWarning,
    ShiftLabError,
    TooManyFailuresError,
)

logger = logging.getLogger(__name__)

#: Maximum share of failed replicates before the bootstrap gives up.
MAX_FAILURE_SHARE = 0.1

ReplicateFunction = Callable[[IntArray, IntArray], FloatArray]


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """Percentile interval for a scalar statistic.

    ``replicates`` holds the successful replicate values sorted ascending;
    ``len(replicates) + failures == B``.
    """

    point: float
    replicates: FloatArray
    ci_low: float
    ci_high: float
    level: float
    failures: int
    B: int

    @property
    def length(self) -> float:
        return self.ci_high - self.ci_low

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


@dataclass(frozen=True, eq=False)
class VectorBootstrap:
    """Percentile intervals for several statistics sharing the same resamples.

    ``replicates`` has one row per successful replicate, in replicate-index order.
    """

    point: FloatArray
    replicates: FloatArray
    ci_low: FloatArray
    ci_high: FloatArray
    level: float
    failures: int
    B: int

    def component(self, k: int) -> BootstrapResult:
        return BootstrapResult(
            point=float(self.point[k]),
            replicates=np.sort(self.replicates[:, k]),
            ci_low=float(self.ci_low[k]),
            ci_high=float(self.ci_high[k]),
            level=self.level,
            failures=self.failures,
            B=self.B,
        )


def silence_solver_warnings() -> None:
    """Ignore solver warnings within the current ``warnings`` filter context."""
    for category in (ConvergenceWarning, SeparationWarning, IdentificationWarning):
        warnings.simplefilter("ignore", category)


def percentile_indices(m: int, level: float) -> tuple[int, int]:
    """1-based order statistics ``ceil(m (1 - level) / 2)`` and ``ceil(m (1 + level) / 2)``.

    Both are clipped to ``[1, m]``; ``B = 500`` at level 0.95 gives ``(13, 488)``.
    """
    if m < 1:
        raise ShiftLabError("no replicates to take percentiles of")
    low = math.ceil(m * (1.0 - level) / 2.0 - 1e-9)
    high = math.ceil(m * (1.0 + level) / 2.0 - 1e-9)
    return min(max(low, 1), m), min(max(high, 1), m)


def resample_indices(
    n1: int, n0: int, seed: int, replicate: int, stream: Sequence[int] = ()
) -> tuple[IntArray, IntArray]:
    """Source and target row indices for bootstrap replicate ``replicate``."""
    rng = streams.split(seed, streams.BOOTSTRAP, *stream, replicate)
    return rng.integers(0, n1, size=n1), rng.integers(0, n0, size=n0)


def _validate(B: int, level: float) -> None:
    if B < 2:
        raise ShiftLabError(f"need at least 2 bootstrap replicates, got {B}")
    if not 0.0 < level < 1.0:
        raise ShiftLabError(f"confidence level must be in (0, 1), got {level}")


def bootstrap_many(
    n1: int,
    n0: int,
    evaluate: ReplicateFunction,
    point: FloatArray,
    B: int = 500,
    level: float = 0.95,
    seed: int = 0,
    threads: int = 1,
    quiet: bool = True,
    stream: Sequence[int] = (),
) -> VectorBootstrap:
    """Bootstrap a vector of statistics over one shared set of resamples.

    Parameters
    ----------
    n1, n0 : int
        Source and target sample sizes
    evaluate : callable
        ``evaluate(source_idx, target_idx)`` returns the statistic vector on
        the resampled data; raising ``ShiftLabError`` or returning a
        non-finite entry marks the replicate as failed
    point : ndarray
        Statistic vector on the original data
    B : int, default 500
        Number of replicates
    level : float, default 0.95
        Confidence level
    seed : int, default 0
        Root seed of the resampling streams
    threads : int, default 1
        Worker threads
    quiet : bool, default True
        Silence solver warnings raised inside replicates. Warning filters are
        process-global, so callers already running in worker threads pass False
        and filter from the main thread
    stream : sequence of int, optional
        Extra stream coordinates, so that independent bootstraps can share a seed

    Returns
    -------
    VectorBootstrap
        Intervals per statistic

    Raises
    ------
    TooManyFailuresError
        If more than ``B / 10`` replicates fail
    """
    _validate(B, level)
    estimate = np.asarray(point, dtype=np.float64).reshape(-1)

    def run(replicate: int) -> FloatArray | None:
        source_idx, target_idx = resample_indices(n1, n0, seed, replicate, stream)
        try:
            values = np.asarray(evaluate(source_idx, target_idx), dtype=np.float64).reshape(-1)
        except ShiftLabError as exc:
            logger.debug("bootstrap replicate %d failed: %s", replicate, exc)
            return None
        if values.shape != estimate.shape or not np.all(np.isfinite(values)):
            logger.debug("bootstrap replicate %d returned non-finite values", replicate)
            return None
        return values

    if quiet:
        with warnings.catch_warnings():
            silence_solver_warnings()
            with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
                outcomes = list(pool.map(run, range(B)))
    else:
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            outcomes = list(pool.map(run, range(B)))

    successes = [values for values in outcomes if values is not None]
    failures = B - len(successes)
    if failures > MAX_FAILURE_SHARE * B:
        raise TooManyFailuresError(
            f"{failures} of {B} bootstrap replicates failed (limit {int(MAX_FAILURE_SHARE * B)})"
        )
    replicates = np.vstack(successes) if successes else np.empty((0, estimate.size))
    low, high = percentile_indices(len(successes), level)
    ordered = np.sort(replicates, axis=0)
    logger.info("bootstrap: B=%d failures=%d level=%g", B, failures, level)
    return VectorBootstrap(
        point=estimate,
        replicates=replicates,
        ci_low=ordered[low - 1],
        ci_high=ordered[high - 1],
        level=level,
        failures=failures,
        B=B,
    )


def bootstrap_ci(
    data: PooledDataset,
    statistic: Callable[[PooledDataset], float],
    B: int = 500,
    level: float = 0.95,
    seed: int = 0,
    threads: int = 1,
) -> BootstrapResult:
    """Percentile bootstrap interval for a scalar statistic of a pooled dataset.

    Parameters
    ----------
    data : PooledDataset
        Original data
    statistic : callable
        Maps a dataset to a number; it must refit whatever it depends on
    B : int, default 500
        Number of replicates
    level : float, default 0.95
        Confidence level
    seed : int, default 0
        Root seed of the resampling streams
    threads : int, default 1
        Worker threads

    Returns
    -------
    BootstrapResult
        Point estimate on ``data`` and the percentile interval
    """
    _validate(B, level)
    point = float(statistic(data))

    def evaluate(source_idx: IntArray, target_idx: IntArray) -> FloatArray:
        return np.array([statistic(data.take(source_idx, target_idx))])

    result = bootstrap_many(data.n1, data.n0, evaluate, np.array([point]), B, level, seed, threads)
    return result.component(0)

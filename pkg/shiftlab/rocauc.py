"""Target-domain ROC and AUC of a score from weighted class-conditional CDFs.

The target labels are unobserved, so each target point contributes to the
class-1 score distribution with mass proportional to its estimated target
posterior ``H`` and to the class-0 distribution with mass proportional to
``1 - H``. Ties count half in the AUC and CDFs use the ``<=`` convention.
Curve values very close to ``u = 0`` or ``u = 1`` are reported but are
statistically unreliable.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from .core import (
    CovariateBlock,
    FloatArray,
    OutcomeModelParams,
    PooledDataset,
    TiltParams,
    target_posterior,
)
from .exceptions import DegenerateClassError, DimensionMismatchError, ShiftLabError

#: Slack used when inverting a CDF so that cumulative sums a rounding error short still count.
QUANTILE_SLACK = 1e-12

#: Default false-positive-rate grid for curve output.
DEFAULT_GRID: FloatArray = np.round(np.linspace(0.005, 0.995, 199), 3)


@dataclass(frozen=True, eq=False)
class WeightedCdf:
    """A discrete distribution on scores: strictly increasing atoms with masses summing to 1."""

    atoms: FloatArray
    masses: FloatArray

    def __post_init__(self) -> None:
        atoms = np.array(self.atoms, dtype=np.float64).reshape(-1)
        masses = np.array(self.masses, dtype=np.float64).reshape(-1)
        if atoms.size == 0 or atoms.size != masses.size:
            raise DimensionMismatchError(
                f"need matching nonempty atoms and masses, got {atoms.size} and {masses.size}"
            )
        if np.any(np.diff(atoms) <= 0) or not np.all(np.isfinite(atoms)):
            raise ShiftLabError("atoms must be finite and strictly increasing")
        if np.any(masses < 0) or not np.all(np.isfinite(masses)):
            raise ShiftLabError("masses must be finite and nonnegative")
        total = math.fsum(masses)
        if total <= 0:
            raise ShiftLabError("masses sum to zero")
        masses = masses / total
        cumulative = np.cumsum(masses)
        # The last positive-mass atom and everything after it sit at exactly 1.
        last = int(np.flatnonzero(masses > 0)[-1])
        cumulative[last:] = 1.0
        for array in (atoms, masses, cumulative):
            array.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "_cumulative", cumulative)

    @property
    def cumulative(self) -> FloatArray:
        value: FloatArray = object.__getattribute__(self, "_cumulative")
        return value

    @classmethod
    def from_weights(cls, scores: ArrayLike, weights: ArrayLike) -> WeightedCdf:
        """Build from unsorted scores, merging the weights of tied scores."""
        values = np.asarray(scores, dtype=np.float64).reshape(-1)
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if values.size != w.size:
            raise DimensionMismatchError(f"{values.size} scores but {w.size} weights")
        atoms, inverse = np.unique(values, return_inverse=True)
        masses = np.bincount(inverse.reshape(-1), weights=w, minlength=atoms.size)
        return cls(atoms, masses)

    def evaluate(self, u: ArrayLike) -> FloatArray:
        """``F(u)``: total mass on atoms ``<= u`` (right-continuous)."""
        points = np.asarray(u, dtype=np.float64)
        index = np.searchsorted(self.atoms, points, side="right")
        padded = np.concatenate([[0.0], self.cumulative])
        result: FloatArray = padded[index]
        return result

    def mass_at(self, u: ArrayLike) -> FloatArray:
        points = np.asarray(u, dtype=np.float64)
        index = np.searchsorted(self.atoms, points, side="left")
        clipped = np.minimum(index, self.atoms.size - 1)
        hit = (index < self.atoms.size) & (self.atoms[clipped] == points)
        result: FloatArray = np.where(hit, self.masses[clipped], 0.0)
        return result


@dataclass(frozen=True, eq=False)
class WeightedCdfs:
    """Class-0 and class-1 score distributions plus the estimated target prevalence."""

    f0: WeightedCdf
    f1: WeightedCdf
    mu_hat: float


@dataclass(frozen=True, eq=False)
class RocCurve:
    thresholds: FloatArray
    values: FloatArray

    def rows(self) -> list[tuple[float, float]]:
        return [(float(u), float(v)) for u, v in zip(self.thresholds, self.values)]


def build_weighted_cdfs(scores: ArrayLike, posteriors: ArrayLike) -> WeightedCdfs:
    """Weighted empirical CDFs of the scores within each target class.

    Parameters
    ----------
    scores : array_like
        Classifier scores on the target sample
    posteriors : array_like
        Estimated target posteriors ``H`` on the same points

    Returns
    -------
    WeightedCdfs
        ``f1`` has mass ``H_j / (n0 mu)`` at score ``c_j``, ``f0`` has mass
        ``(1 - H_j) / (n0 (1 - mu))``, with ``mu = mean(H)``

    Raises
    ------
    DegenerateClassError
        If ``mean(H)`` is 0 or 1
    """
    values = np.asarray(scores, dtype=np.float64).reshape(-1)
    h = np.asarray(posteriors, dtype=np.float64).reshape(-1)
    if values.size != h.size or values.size == 0:
        raise DimensionMismatchError(f"{values.size} scores but {h.size} posteriors")
    if np.any((h < 0) | (h > 1)) or not np.all(np.isfinite(h)):
        raise ShiftLabError("posteriors must lie in [0, 1]")
    n0 = h.size
    mu_hat = math.fsum(h) / n0
    if not 0.0 < mu_hat < 1.0:
        raise DegenerateClassError(
            f"estimated target prevalence is {mu_hat:g}; one class is absent "
            "and class-conditional score distributions are undefined"
        )
    f1 = WeightedCdf.from_weights(values, h / (n0 * mu_hat))
    f0 = WeightedCdf.from_weights(values, (1.0 - h) / (n0 * (1.0 - mu_hat)))
    return WeightedCdfs(f0, f1, mu_hat)


def quantile(cdf: WeightedCdf, p: float) -> float:
    """Generalized inverse ``inf{u : F(u) >= p}`` over the atoms, for ``0 < p <= 1``.

    The comparison is ``F(u) >= p - QUANTILE_SLACK``: an atom whose cumulative
    mass falls short of ``p`` by at most ``1e-12`` is returned, so a level such
    as ``1 - 0.1`` matches a cumulative sum of ``0.1``-masses that rounds just
    below it. Levels that differ from every cumulative mass by more than the
    slack get the exact generalized inverse.
    """
    if not 0.0 < p <= 1.0:
        raise ShiftLabError(f"quantile level must be in (0, 1], got {p}")
    index = int(np.searchsorted(cdf.cumulative, p - QUANTILE_SLACK, side="left"))
    return float(cdf.atoms[min(index, cdf.atoms.size - 1)])


def roc_at(f0: WeightedCdf, f1: WeightedCdf, u: float) -> float:
    """True-positive rate at false-positive rate ``u``: ``1 - F1(F0^{-1}(1 - u))``."""
    if not 0.0 < u < 1.0:
        raise ShiftLabError(f"false-positive rate must be in (0, 1), got {u}")
    threshold = quantile(f0, 1.0 - u)
    return float(1.0 - f1.evaluate(threshold))


def roc_curve(f0: WeightedCdf, f1: WeightedCdf, grid: ArrayLike = DEFAULT_GRID) -> RocCurve:
    thresholds = np.asarray(grid, dtype=np.float64).reshape(-1)
    values = np.array([roc_at(f0, f1, float(u)) for u in thresholds])
    return RocCurve(thresholds, values)


def auc(f0: WeightedCdf, f1: WeightedCdf) -> float:
    """Area under the ROC curve, ``P(C1 > C0) + P(C1 = C0) / 2``.

    Uses one sorted sweep of the class-1 atoms over the class-0 cumulative
    masses.
    """
    below = f0.evaluate(np.nextafter(f1.atoms, -np.inf))
    ties = f0.mass_at(f1.atoms)
    return math.fsum(f1.masses * (below + 0.5 * ties))


# -----------------------------------------------------------------------------
# Scores and classifier evaluation
# -----------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedScore:
    """A score function fixed in advance, ``c(x)``.

    Parameters
    ----------
    function : callable
        Maps a covariate block to one score per row
    name : str, default "fixed"
        Label used in reports
    """

    function: Callable[[CovariateBlock], FloatArray]
    name: str = "fixed"

    @classmethod
    def from_column(cls, column: str) -> FixedScore:
        """Read scores from an annotation column carried by the target block."""

        def read(covariates: CovariateBlock) -> FloatArray:
            if column not in covariates.annotations:
                raise ShiftLabError(
                    f"score column '{column}' not found among "
                    f"{sorted(covariates.annotations)}; pass it with --score fixed:<column>"
                )
            return covariates.annotations[column]

        return cls(read, column)

    def scores(self, covariates: CovariateBlock, posterior: FloatArray) -> FloatArray:
        values = np.asarray(self.function(covariates), dtype=np.float64).reshape(-1)
        if values.size != covariates.n or not np.all(np.isfinite(values)):
            raise ShiftLabError(f"score '{self.name}' must give one finite value per row")
        return values


@dataclass(frozen=True)
class EstimatedPosterior:
    """The plug-in score ``c(x) = H(x)``, the estimated target posterior."""

    name: str = "posterior"

    def scores(self, covariates: CovariateBlock, posterior: FloatArray) -> FloatArray:
        return posterior


ScoreSpec = FixedScore | EstimatedPosterior


@dataclass(frozen=True, eq=False)
class ClassifierEvaluation:
    curve: RocCurve
    auc: float
    cdfs: WeightedCdfs

    @property
    def mu_hat(self) -> float:
        return self.cdfs.mu_hat


def evaluate_classifier(
    data: PooledDataset,
    theta: TiltParams,
    xi: OutcomeModelParams,
    score: ScoreSpec,
    grid: ArrayLike = DEFAULT_GRID,
) -> ClassifierEvaluation:
    """Estimate the target ROC curve and AUC of ``score``.

    Parameters
    ----------
    data : PooledDataset
        Only the target covariates are used
    theta : TiltParams
        Fitted tilt
    xi : OutcomeModelParams
        Fitted source posterior
    score : FixedScore or EstimatedPosterior
        The classifier score to evaluate
    grid : array_like, default DEFAULT_GRID
        False-positive rates at which the curve is reported

    Returns
    -------
    ClassifierEvaluation
        Curve on the grid, AUC and the underlying weighted CDFs
    """
    posterior = target_posterior(data.target, theta, xi)
    cdfs = build_weighted_cdfs(score.scores(data.target, posterior), posterior)
    return ClassifierEvaluation(roc_curve(cdfs.f0, cdfs.f1, grid), auc(cdfs.f0, cdfs.f1), cdfs)

"""Domain types and the weight/posterior formulas of the exponential tilting model.

Every covariate vector is split into group features ``x1`` (length ``d``) and
non-group features ``x2`` (length ``q``). The target/source density ratio of
``(x1, y)`` is modeled as ``exp(alpha_y + beta_y' x1)``; the source posterior
``g(x) = P(Y=1 | x)`` in the source domain is a logistic model.

Sign convention
---------------
``g(x; xi) = sigmoid(xi0 + xi1' x)``. Written as ``1 / (1 + exp(c0 + c1' x))``
the same model has ``c = -xi``, so coefficients quoted in that form are the
negation of the ones stored here.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import NamedTuple, overload

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

from .exceptions import DimensionMismatchError, NumericRangeError, ShiftLabError

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

#: Clipping applied to every source posterior before it enters a weight or a likelihood.
EPSILON = 1e-12

_LOG_MAX = float(np.log(np.finfo(np.float64).max))


def _frozen(values: ArrayLike, ndim: int, name: str) -> FloatArray:
    array = np.array(values, dtype=np.float64)
    if ndim == 1:
        array = array.reshape(-1)
    elif array.ndim == 1:
        array = array.reshape(-1, 1)
    if array.ndim != ndim:
        raise DimensionMismatchError(f"{name} must be {ndim}-dimensional, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ShiftLabError(f"{name} contains non-finite entries")
    array.setflags(write=False)
    return array


# -----------------------------------------------------------------------------
# Covariates and datasets
# -----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CovariateVector:
    """A single covariate vector ``x = (x1, x2)``.

    Parameters
    ----------
    x1 : array_like
        Group features, length ``d >= 1``
    x2 : array_like
        Non-group features, length ``q >= 0``
    """

    x1: FloatArray
    x2: FloatArray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        object.__setattr__(self, "x1", _frozen(self.x1, 1, "x1"))
        object.__setattr__(self, "x2", _frozen(self.x2, 1, "x2"))
        if self.x1.size < 1:
            raise DimensionMismatchError("x1 must contain at least one group feature")

    @property
    def d(self) -> int:
        return int(self.x1.size)

    @property
    def q(self) -> int:
        return int(self.x2.size)

    def as_block(self) -> CovariateBlock:
        """Return this vector as a one-row block."""
        return CovariateBlock(self.x1.reshape(1, -1), self.x2.reshape(1, -1))


@dataclass(frozen=True, eq=False)
class CovariateBlock:
    """A batch of ``n`` covariate vectors stored column-wise.

    Parameters
    ----------
    x1 : array_like, shape (n, d)
        Group features
    x2 : array_like, shape (n, q)
        Non-group features; ``q`` may be 0
    annotations : Mapping[str, ndarray], optional
        Pass-through columns (e.g. externally supplied scores) that travel
        with the rows under ``take`` but are never read by the estimators
    """

    x1: FloatArray
    x2: FloatArray | None = None
    annotations: Mapping[str, FloatArray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        x1 = _frozen(self.x1, 2, "x1")
        x2 = np.zeros((x1.shape[0], 0)) if self.x2 is None else self.x2
        x2 = _frozen(x2, 2, "x2")
        if x2.shape[0] != x1.shape[0]:
            raise DimensionMismatchError(
                f"x1 has {x1.shape[0]} rows but x2 has {x2.shape[0]} rows"
            )
        if x1.shape[1] < 1:
            raise DimensionMismatchError("x1 must contain at least one group feature")
        annotations = {key: _frozen(value, 1, key) for key, value in self.annotations.items()}
        for key, value in annotations.items():
            if value.size != x1.shape[0]:
                raise DimensionMismatchError(f"annotation '{key}' has {value.size} entries")
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "annotations", annotations)

    @property
    def n(self) -> int:
        return int(self.x1.shape[0])

    @property
    def d(self) -> int:
        return int(self.x1.shape[1])

    @property
    def q(self) -> int:
        assert self.x2 is not None
        return int(self.x2.shape[1])

    def __len__(self) -> int:
        return self.n

    def design(self) -> FloatArray:
        """Return the ``(n, d + q)`` matrix ``[x1, x2]`` without an intercept."""
        assert self.x2 is not None
        return np.hstack([self.x1, self.x2])

    def row(self, index: int) -> CovariateVector:
        assert self.x2 is not None
        return CovariateVector(self.x1[index], self.x2[index])

    def take(self, indices: ArrayLike) -> CovariateBlock:
        """Return the rows at ``indices`` (repeats allowed), annotations included."""
        idx = np.asarray(indices, dtype=np.intp)
        assert self.x2 is not None
        return CovariateBlock(
            self.x1[idx],
            self.x2[idx],
            {key: value[idx] for key, value in self.annotations.items()},
        )

    @classmethod
    def from_vectors(cls, vectors: Sequence[CovariateVector]) -> CovariateBlock:
        if not vectors:
            raise ShiftLabError("cannot build a covariate block from zero vectors")
        return cls(
            np.vstack([v.x1 for v in vectors]),
            np.vstack([v.x2.reshape(1, -1) for v in vectors]),
        )

    @classmethod
    def concat(cls, first: CovariateBlock, second: CovariateBlock) -> CovariateBlock:
        """Stack two blocks row-wise (annotations are dropped)."""
        _check_same_shape(first, second)
        assert first.x2 is not None and second.x2 is not None
        return cls(np.vstack([first.x1, second.x1]), np.vstack([first.x2, second.x2]))


@dataclass(frozen=True)
class SourceSample:
    """One labeled source observation."""

    x: CovariateVector
    y: int

    def __post_init__(self) -> None:
        if self.y not in (0, 1):
            raise ShiftLabError(f"label must be 0 or 1, got {self.y!r}")


@dataclass(frozen=True, eq=False)
class LabeledBlock:
    """A batch of labeled observations: covariates plus binary labels."""

    covariates: CovariateBlock
    y: IntArray

    def __post_init__(self) -> None:
        labels = np.asarray(self.y)
        if labels.ndim != 1 or labels.size != self.covariates.n:
            raise DimensionMismatchError(
                f"expected {self.covariates.n} labels, got shape {labels.shape}"
            )
        if not np.all((labels == 0) | (labels == 1)):
            raise ShiftLabError("labels must be 0 or 1")
        labels = labels.astype(np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "y", labels)

    @property
    def n(self) -> int:
        return self.covariates.n

    def take(self, indices: ArrayLike) -> LabeledBlock:
        idx = np.asarray(indices, dtype=np.intp)
        return LabeledBlock(self.covariates.take(idx), self.y[idx])

    @classmethod
    def from_samples(cls, samples: Sequence[SourceSample]) -> LabeledBlock:
        return cls(
            CovariateBlock.from_vectors([s.x for s in samples]),
            np.array([s.y for s in samples], dtype=np.int64),
        )


@dataclass(frozen=True, eq=False)
class PooledDataset:
    """Labeled source observations plus unlabeled target covariates.

    The domain indicator is implicit: source rows come first when the two
    samples are pooled.
    """

    source: LabeledBlock
    target: CovariateBlock

    def __post_init__(self) -> None:
        if self.source.n < 1 or self.target.n < 1:
            raise ShiftLabError(
                f"both domains need at least one row (n1={self.source.n}, n0={self.target.n})"
            )
        _check_same_shape(self.source.covariates, self.target)

    @property
    def n1(self) -> int:
        return self.source.n

    @property
    def n0(self) -> int:
        return self.target.n

    @property
    def rho(self) -> float:
        """Target-to-source sample-size ratio ``n0 / n1``."""
        return self.n0 / self.n1

    @property
    def d(self) -> int:
        return self.target.d

    @property
    def q(self) -> int:
        return self.target.q

    def pooled_covariates(self) -> CovariateBlock:
        """Source covariates followed by target covariates."""
        return CovariateBlock.concat(self.source.covariates, self.target)

    def take(self, source_indices: ArrayLike, target_indices: ArrayLike) -> PooledDataset:
        """Return the dataset restricted to (possibly repeated) row indices."""
        return PooledDataset(self.source.take(source_indices), self.target.take(target_indices))

    @classmethod
    def from_samples(
        cls, source: Sequence[SourceSample], target: Sequence[CovariateVector]
    ) -> PooledDataset:
        return cls(LabeledBlock.from_samples(source), CovariateBlock.from_vectors(target))


def _check_same_shape(first: CovariateBlock, second: CovariateBlock) -> None:
    if (first.d, first.q) != (second.d, second.q):
        raise DimensionMismatchError(
            f"covariate dimensions differ: (d={first.d}, q={first.q}) "
            f"vs (d={second.d}, q={second.q})"
        )


# -----------------------------------------------------------------------------
# Parameters
# -----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TiltParams:
    """Shift parameters ``theta = (alpha0, beta0, alpha1, beta1)``."""

    alpha0: float
    beta0: FloatArray
    alpha1: float
    beta1: FloatArray

    def __post_init__(self) -> None:
        beta0 = _frozen(self.beta0, 1, "beta0")
        beta1 = _frozen(self.beta1, 1, "beta1")
        if beta0.size != beta1.size or beta0.size < 1:
            raise DimensionMismatchError(
                f"beta0 and beta1 must share a positive length, got {beta0.size} and {beta1.size}"
            )
        if not (np.isfinite(self.alpha0) and np.isfinite(self.alpha1)):
            raise ShiftLabError("tilt intercepts must be finite")
        object.__setattr__(self, "alpha0", float(self.alpha0))
        object.__setattr__(self, "alpha1", float(self.alpha1))
        object.__setattr__(self, "beta0", beta0)
        object.__setattr__(self, "beta1", beta1)

    @property
    def d(self) -> int:
        return int(self.beta0.size)

    @classmethod
    def zeros(cls, d: int) -> TiltParams:
        """The no-shift model."""
        return cls(0.0, np.zeros(d), 0.0, np.zeros(d))

    @classmethod
    def from_vector(cls, vector: ArrayLike) -> TiltParams:
        """Build from the flat ordering ``(alpha0, beta0, alpha1, beta1)``."""
        flat = np.asarray(vector, dtype=np.float64).reshape(-1)
        if flat.size < 4 or flat.size % 2:
            raise DimensionMismatchError(f"tilt vector must have length 2d+2, got {flat.size}")
        d = flat.size // 2 - 1
        return cls(flat[0], flat[1 : d + 1], flat[d + 1], flat[d + 2 :])

    def as_vector(self) -> FloatArray:
        return np.concatenate([[self.alpha0], self.beta0, [self.alpha1], self.beta1])


@dataclass(frozen=True, eq=False)
class OutcomeModelParams:
    """Source posterior coefficients ``xi = (xi0, xi1)`` over the columns ``[x1, x2]``."""

    xi0: float
    xi1: FloatArray

    def __post_init__(self) -> None:
        if not np.isfinite(self.xi0):
            raise ShiftLabError("outcome intercept must be finite")
        object.__setattr__(self, "xi0", float(self.xi0))
        object.__setattr__(self, "xi1", _frozen(self.xi1, 1, "xi1"))

    @classmethod
    def zeros(cls, p: int) -> OutcomeModelParams:
        return cls(0.0, np.zeros(p))

    @classmethod
    def from_vector(cls, vector: ArrayLike) -> OutcomeModelParams:
        """Build from ``(xi0, xi1...)``."""
        flat = np.asarray(vector, dtype=np.float64).reshape(-1)
        return cls(flat[0], flat[1:])

    def as_vector(self) -> FloatArray:
        return np.concatenate([[self.xi0], self.xi1])

    def linear_predictor(self, covariates: CovariateBlock) -> FloatArray:
        if covariates.d + covariates.q != self.xi1.size:
            raise DimensionMismatchError(
                f"outcome model has {self.xi1.size} slopes but covariates have "
                f"{covariates.d + covariates.q} columns"
            )
        return self.xi0 + covariates.design() @ self.xi1


# -----------------------------------------------------------------------------
# Weight and posterior formulas
# -----------------------------------------------------------------------------


class WeightComponents(NamedTuple):
    """Class-0 part, class-1 part and total of the covariate density ratio."""

    w0: FloatArray
    w1: FloatArray
    w: FloatArray


class ScalarWeightComponents(NamedTuple):
    w0: float
    w1: float
    w: float


def _as_block(x: CovariateVector | CovariateBlock) -> CovariateBlock:
    return x.as_block() if isinstance(x, CovariateVector) else x


def _exp_checked(eta: FloatArray) -> FloatArray:
    if eta.size and float(np.max(eta)) > _LOG_MAX:
        raise NumericRangeError(
            f"tilt linear predictor {float(np.max(eta)):.4g} overflows exp(); "
            "check the scale of the group features or the tilt parameters"
        )
    return np.exp(eta)


def tilt_predictors(x1: FloatArray, theta: TiltParams) -> tuple[FloatArray, FloatArray]:
    """Return ``(alpha0 + x1 beta0, alpha1 + x1 beta1)`` for an ``(n, d)`` array."""
    if x1.shape[1] != theta.d:
        raise DimensionMismatchError(
            f"tilt parameters have d={theta.d} but group features have {x1.shape[1]} columns"
        )
    return theta.alpha0 + x1 @ theta.beta0, theta.alpha1 + x1 @ theta.beta1


def source_posterior_array(covariates: CovariateBlock, xi: OutcomeModelParams) -> FloatArray:
    """Clipped source posterior ``g(x; xi)`` for every row of a block."""
    g: FloatArray = np.clip(expit(xi.linear_predictor(covariates)), EPSILON, 1.0 - EPSILON)
    return g


@overload
def source_posterior(x: CovariateVector, xi: OutcomeModelParams) -> float: ...


@overload
def source_posterior(x: CovariateBlock, xi: OutcomeModelParams) -> FloatArray: ...


def source_posterior(
    x: CovariateVector | CovariateBlock, xi: OutcomeModelParams
) -> float | FloatArray:
    """Evaluate the source posterior ``g(x; xi) = sigmoid(xi0 + xi1' x)``.

    The result is clipped to ``[EPSILON, 1 - EPSILON]``.

    Parameters
    ----------
    x : CovariateVector or CovariateBlock
        One covariate vector or a block of them
    xi : OutcomeModelParams
        Outcome model coefficients over ``[x1, x2]``

    Returns
    -------
    float or ndarray
        Scalar for a vector input, array of length ``n`` for a block
    """
    g = source_posterior_array(_as_block(x), xi)
    return float(g[0]) if isinstance(x, CovariateVector) else g


@overload
def joint_weight(x1: ArrayLike, y: int, theta: TiltParams) -> float: ...


@overload
def joint_weight(x1: ArrayLike, y: ArrayLike, theta: TiltParams) -> float | FloatArray: ...


def joint_weight(x1: ArrayLike, y: ArrayLike, theta: TiltParams) -> float | FloatArray:
    """Joint density ratio ``w(x, y; theta) = exp(alpha_y + beta_y' x1)``.

    Parameters
    ----------
    x1 : array_like
        A single group-feature vector (scalar or length ``d``) or an ``(n, d)`` array
    y : int or array_like
        Label(s) in {0, 1}
    theta : TiltParams
        Tilt parameters

    Returns
    -------
    float or ndarray
        Scalar for a single vector, array otherwise

    Raises
    ------
    NumericRangeError
        If the exponential overflows
    """
    raw = np.asarray(x1, dtype=np.float64)
    single = raw.ndim < 2
    block = raw.reshape(1, -1) if single else raw
    labels = np.broadcast_to(np.asarray(y), (block.shape[0],))
    if not np.all((labels == 0) | (labels == 1)):
        raise ShiftLabError("labels must be 0 or 1")
    eta0, eta1 = tilt_predictors(block, theta)
    weight = _exp_checked(np.where(labels == 1, eta1, eta0))
    return float(weight[0]) if single else weight


@overload
def weight_components(
    x: CovariateVector, theta: TiltParams, xi: OutcomeModelParams
) -> ScalarWeightComponents: ...


@overload
def weight_components(
    x: CovariateBlock, theta: TiltParams, xi: OutcomeModelParams
) -> WeightComponents: ...


def weight_components(
    x: CovariateVector | CovariateBlock, theta: TiltParams, xi: OutcomeModelParams
) -> ScalarWeightComponents | WeightComponents:
    """Return ``(w0, w1, w)`` with ``w1 = exp(alpha1 + beta1' x1) g`` and ``w = w0 + w1``."""
    block = _as_block(x)
    g = source_posterior_array(block, xi)
    eta0, eta1 = tilt_predictors(block.x1, theta)
    w0 = _exp_checked(eta0) * (1.0 - g)
    w1 = _exp_checked(eta1) * g
    w = w0 + w1
    if not np.all(np.isfinite(w)):
        raise NumericRangeError("density ratio overflowed after combining the class components")
    if np.any(w <= 0.0):
        raise NumericRangeError(
            "density ratio underflowed to zero; the tilt linear predictors are too negative "
            "for exp(), use target_posterior for the ratio w1 / w"
        )
    if isinstance(x, CovariateVector):
        return ScalarWeightComponents(float(w0[0]), float(w1[0]), float(w[0]))
    return WeightComponents(w0, w1, w)


@overload
def target_posterior(x: CovariateVector, theta: TiltParams, xi: OutcomeModelParams) -> float: ...


@overload
def target_posterior(
    x: CovariateBlock, theta: TiltParams, xi: OutcomeModelParams
) -> FloatArray: ...


def target_posterior(
    x: CovariateVector | CovariateBlock, theta: TiltParams, xi: OutcomeModelParams
) -> float | FloatArray:
    """Model-implied target posterior ``H(x) = w1 / (w0 + w1)``.

    Evaluated on the log-odds scale as ``expit(eta1 - eta0 + logit g)``, which
    stays finite when both class components underflow.
    """
    block = _as_block(x)
    g = source_posterior_array(block, xi)
    eta0, eta1 = tilt_predictors(block.x1, theta)
    log_odds = eta1 - eta0 + np.log(g) - np.log1p(-g)
    if not np.all(np.isfinite(log_odds)):
        raise NumericRangeError("target log-odds are not finite; check the tilt parameters")
    posterior: FloatArray = expit(log_odds)
    return float(posterior[0]) if isinstance(x, CovariateVector) else posterior


def label_shift_params(alpha0: float, alpha1: float, d: int) -> TiltParams:
    """Tilt parameters of a pure label shift (``beta0 = beta1 = 0``)."""
    return TiltParams(alpha0, np.zeros(d), alpha1, np.zeros(d))

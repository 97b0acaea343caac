"""Tests for the domain types and weight formulas."""

import math

import numpy as np
import pytest

from shiftlab.core import (
    EPSILON,
    CovariateBlock,
    CovariateVector,
    LabeledBlock,
    OutcomeModelParams,
    PooledDataset,
    SourceSample,
    TiltParams,
    joint_weight,
    label_shift_params,
    source_posterior,
    target_posterior,
    weight_components,
)
from shiftlab.exceptions import DimensionMismatchError, NumericRangeError, ShiftLabError


class TestSourcePosterior:
    """Test the clipped logistic source posterior."""

    def test_zero_coefficients(self):
        """Test that zero coefficients give one half."""
        x = CovariateVector([1.0], [3.0, -2.0])
        assert source_posterior(x, OutcomeModelParams.zeros(3)) == 0.5

    def test_intercept_ln3(self):
        """Test sigmoid(ln 3) = 3/4."""
        x = CovariateVector([0.0], [5.0])
        assert source_posterior(x, OutcomeModelParams(math.log(3), [0.0, 0.0])) == pytest.approx(
            0.75, abs=1e-15
        )

    def test_group_slope(self):
        """Test a slope on the first group feature."""
        x = CovariateVector([2.0, 0.0])
        value = source_posterior(x, OutcomeModelParams(0.0, [1.0, 0.0]))
        assert value == pytest.approx(0.880797, abs=1e-6)

    def test_clipping(self):
        """Test that extreme predictors stay inside the clip bounds."""
        block = CovariateBlock([[0.0], [0.0]], [[1e6], [-1e6]])
        g = source_posterior(block, OutcomeModelParams(0.0, [0.0, 1.0]))
        assert g[0] == 1.0 - EPSILON
        assert g[1] == EPSILON

    def test_dimension_mismatch(self):
        """Test that a wrong number of slopes is rejected."""
        with pytest.raises(DimensionMismatchError):
            source_posterior(CovariateVector([1.0], [1.0]), OutcomeModelParams.zeros(3))


class TestJointWeight:
    """Test the joint density ratio."""

    def test_zero_theta(self):
        """Test that the no-shift model gives weight 1."""
        theta = TiltParams.zeros(2)
        assert joint_weight([0.3, -1.0], 0, theta) == 1.0
        assert joint_weight([0.3, -1.0], 1, theta) == 1.0

    def test_reference_tilt(self, theta_star):
        """Test the reference tilt at both cells with x1 = y."""
        assert joint_weight(0.0, 0, theta_star) == pytest.approx(5.0, rel=1e-14)
        assert joint_weight(1.0, 1, theta_star) == pytest.approx(3.0, rel=1e-14)

    def test_vectorized(self, theta_star):
        """Test evaluation over a block of group features."""
        weights = joint_weight(np.array([[0.0], [1.0]]), np.array([0, 1]), theta_star)
        np.testing.assert_allclose(weights, [5.0, 3.0], rtol=1e-14)

    def test_overflow(self):
        """Test that an overflowing exponent raises."""
        theta = TiltParams(800.0, [0.0], 0.0, [0.0])
        with pytest.raises(NumericRangeError):
            joint_weight([0.0], 0, theta)

    def test_bad_label(self, theta_star):
        """Test that labels outside {0, 1} are rejected."""
        with pytest.raises(ShiftLabError):
            joint_weight([0.0], 2, theta_star)


class TestWeightComponents:
    """Test the class components of the covariate density ratio."""

    def test_zero_theta(self):
        """Test (0.5, 0.5, 1.0) at zero tilt and g = 0.5."""
        x = CovariateVector([1.0], [2.0])
        assert weight_components(x, TiltParams.zeros(1), OutcomeModelParams.zeros(2)) == (
            0.5,
            0.5,
            1.0,
        )

    def test_reference_tilt(self, theta_star):
        """Test (2.5, 0.125, 2.625) at x1 = 0 and g = 0.5."""
        x = CovariateVector([0.0], [0.0])
        w0, w1, w = weight_components(x, theta_star, OutcomeModelParams.zeros(2))
        assert w0 == pytest.approx(2.5, rel=1e-14)
        assert w1 == pytest.approx(0.125, rel=1e-14)
        assert w == pytest.approx(2.625, rel=1e-14)

    def test_total_is_sum(self, theta_star, random_xi):
        """Test that w equals w0 + w1 exactly on random inputs."""
        rng = np.random.default_rng(3)
        block = CovariateBlock(rng.integers(0, 2, (50, 1)), rng.normal(size=(50, 2)))
        components = weight_components(block, theta_star, random_xi)
        assert np.array_equal(components.w, components.w0 + components.w1)
        assert np.all(components.w0 > 0) and np.all(components.w1 > 0)

    def test_underflow(self):
        """Test that a total weight underflowing to zero raises."""
        x = CovariateVector([1.0], [0.0])
        theta = TiltParams(-800.0, [0.0], -800.0, [0.0])
        with pytest.raises(NumericRangeError, match="underflowed"):
            weight_components(x, theta, OutcomeModelParams.zeros(2))


class TestTargetPosterior:
    """Test the model-implied target posterior."""

    def test_zero_theta_is_source_posterior(self, random_xi):
        """Test that zero tilt returns g."""
        rng = np.random.default_rng(4)
        block = CovariateBlock(rng.normal(size=(20, 1)), rng.normal(size=(20, 2)))
        np.testing.assert_allclose(
            target_posterior(block, TiltParams.zeros(1), random_xi),
            source_posterior(block, random_xi),
            rtol=1e-13,
        )

    def test_reference_tilt(self, theta_star):
        """Test H = 1/21 at x1 = 0 and g = 0.5."""
        x = CovariateVector([0.0], [0.0])
        assert target_posterior(x, theta_star, OutcomeModelParams.zeros(2)) == pytest.approx(
            1 / 21, rel=1e-14
        )

    def test_strictly_interior_when_clipped(self, theta_star):
        """Test that clipping keeps H strictly inside (0, 1)."""
        block = CovariateBlock([[1.0], [1.0]], [[1e6], [-1e6]])
        h = target_posterior(block, theta_star, OutcomeModelParams(0.0, [0.0, 1.0]))
        assert np.all(h > 0) and np.all(h < 1)

    def test_complement(self, theta_star, random_xi):
        """Test that H + w0 / w = 1."""
        rng = np.random.default_rng(5)
        block = CovariateBlock(rng.integers(0, 2, (30, 1)), rng.normal(size=(30, 2)))
        components = weight_components(block, theta_star, random_xi)
        h = target_posterior(block, theta_star, random_xi)
        np.testing.assert_allclose(h + components.w0 / components.w, 1.0, rtol=1e-13)

    def test_underflowing_components(self):
        """Test that H stays exact when both class components underflow."""
        x = CovariateVector([1.0], [0.0])
        theta = TiltParams(-800.0, [0.0], -800.0, [0.0])
        assert target_posterior(x, theta, OutcomeModelParams.zeros(2)) == pytest.approx(0.5)

    def test_extreme_log_odds(self):
        """Test that a large tilt difference saturates without NaN."""
        block = CovariateBlock([[1.0], [-1.0]], [[0.0], [0.0]])
        theta = TiltParams(0.0, [0.0], 0.0, [900.0])
        h = target_posterior(block, theta, OutcomeModelParams.zeros(2))
        np.testing.assert_array_equal(h, [1.0, 0.0])


class TestContainers:
    """Test the covariate and dataset containers."""

    def test_block_is_read_only(self):
        """Test that stored arrays cannot be mutated."""
        block = CovariateBlock([[1.0], [2.0]])
        with pytest.raises(ValueError):
            block.x1[0, 0] = 5.0

    def test_take_keeps_annotations(self):
        """Test that row selection carries annotation columns."""
        block = CovariateBlock([[1.0], [2.0], [3.0]], annotations={"score": [0.1, 0.2, 0.3]})
        taken = block.take([2, 2, 0])
        np.testing.assert_array_equal(taken.annotations["score"], [0.3, 0.3, 0.1])
        np.testing.assert_array_equal(taken.x1[:, 0], [3.0, 3.0, 1.0])

    def test_row_count_mismatch(self):
        """Test that x1 and x2 must share their row count."""
        with pytest.raises(DimensionMismatchError):
            CovariateBlock([[1.0], [2.0]], [[1.0]])

    def test_pooled_dimension_mismatch(self):
        """Test that source and target dimensions must agree."""
        source = LabeledBlock(CovariateBlock([[0.0]], [[1.0]]), [1])
        with pytest.raises(DimensionMismatchError):
            PooledDataset(source, CovariateBlock([[0.0]], [[1.0, 2.0]]))

    def test_from_samples(self):
        """Test building a dataset from individual observations."""
        data = PooledDataset.from_samples(
            [SourceSample(CovariateVector([0.0]), 0), SourceSample(CovariateVector([1.0]), 1)],
            [CovariateVector([1.0])],
        )
        assert (data.n1, data.n0, data.d, data.q) == (2, 1, 1, 0)
        assert data.rho == 0.5

    def test_bad_label(self):
        """Test that source labels must be binary."""
        with pytest.raises(ShiftLabError):
            SourceSample(CovariateVector([0.0]), 3)


class TestParameters:
    """Test the parameter containers."""

    def test_tilt_vector_order(self):
        """Test the flat ordering (alpha0, beta0, alpha1, beta1)."""
        theta = TiltParams.from_vector([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        assert theta.d == 2
        assert theta.alpha0 == 1.0 and theta.alpha1 == 4.0
        np.testing.assert_array_equal(theta.beta1, [5.0, 6.0])
        np.testing.assert_array_equal(theta.as_vector(), [1, 2, 3, 4, 5, 6])

    def test_tilt_vector_length(self):
        """Test that odd-length vectors are rejected."""
        with pytest.raises(DimensionMismatchError):
            TiltParams.from_vector([1.0, 2.0, 3.0])

    def test_label_shift(self):
        """Test that the label-shift helper zeroes both slopes."""
        theta = label_shift_params(0.5, -0.5, 3)
        assert theta.d == 3
        assert not theta.beta0.any() and not theta.beta1.any()

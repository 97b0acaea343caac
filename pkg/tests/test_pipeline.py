"""Tests for the two-step estimator and its bootstrap."""

import warnings

import numpy as np
import pytest

from shiftlab.core import (
    CovariateBlock,
    LabeledBlock,
    OutcomeModelParams,
    PooledDataset,
    target_posterior,
)
from shiftlab.exceptions import IdentificationWarning
from shiftlab.outcome_model import LogisticOptions, fit_logistic
from shiftlab.pipeline import (
    TwoStepEstimator,
    bootstrap_fit,
    classifier_statistic,
    mean_statistic,
)
from shiftlab.rocauc import EstimatedPosterior


@pytest.fixture
def estimator():
    return TwoStepEstimator()


class TestTwoStepEstimator:
    """Test fitting both steps."""

    def test_fit(self, small_replicate, estimator):
        """Test that a simulated replicate fits and passes identification."""
        fit = estimator.fit(small_replicate.data)
        assert fit.converged
        assert fit.outcome is not None
        assert fit.identification is not None and fit.identification.passed
        assert fit.ridge is None
        assert fit.theta.d == 1

    def test_fixed_outcome_model(self, small_replicate, estimator):
        """Test that a supplied outcome model is used as is."""
        xi = fit_logistic(small_replicate.data.source).params
        fit = estimator.fit(small_replicate.data, xi)
        assert fit.outcome is None
        assert fit.xi is xi

    def test_predict_threshold(self, small_replicate, estimator):
        """Test that prediction thresholds the target posterior inclusively."""
        fit = estimator.fit(small_replicate.data)
        target = small_replicate.data.target
        posterior = fit.posterior(target)
        np.testing.assert_array_equal(posterior, target_posterior(target, fit.theta, fit.xi))
        threshold = float(np.median(posterior))
        labels = fit.predict(target, threshold)
        np.testing.assert_array_equal(labels, (posterior >= threshold).astype(np.int64))
        assert labels.sum() >= target.n // 2

    def test_identification_warning(self):
        """Test that a constant group feature warns before the tilt fit."""
        rng = np.random.default_rng(0)

        def block(n):
            return CovariateBlock(np.ones((n, 1)), rng.normal(size=(n, 1)))

        source = LabeledBlock(block(80), rng.integers(0, 2, 80))
        data = PooledDataset(source, block(80))
        xi = OutcomeModelParams(0.0, [0.0, 1.0])
        with pytest.warns(IdentificationWarning, match="rank condition"):
            fit = TwoStepEstimator().fit(data, xi)
        assert not fit.identification.passed

    def test_no_diagnostics(self, small_replicate):
        """Test that diagnostics can be switched off."""
        with warnings.catch_warnings():
            warnings.simplefilter("error", IdentificationWarning)
            fit = TwoStepEstimator(diagnose=False).fit(small_replicate.data)
        assert fit.identification is None

    def test_ridge_grid(self, small_replicate):
        """Test that a ridge grid records the cross-validated choice."""
        fit = TwoStepEstimator(ridge_grid=[0.0, 10.0], folds=3).fit(small_replicate.data)
        assert fit.ridge is not None
        assert fit.ridge.penalty in (0.0, 10.0)

    def test_for_replicates_freezes_penalty(self, small_replicate):
        """Test that replicate refits reuse the selected penalty without CV."""
        estimator = TwoStepEstimator(ridge_grid=[0.0, 10.0], folds=3)
        fit = estimator.fit(small_replicate.data)
        inner = estimator.for_replicates(fit)
        assert inner.ridge_grid is None
        assert not inner.diagnose
        assert inner.outcome_options.penalty == fit.ridge.penalty

    def test_for_replicates_without_grid(self, small_replicate):
        """Test that a fixed penalty is carried over unchanged."""
        estimator = TwoStepEstimator(outcome_options=LogisticOptions(penalty=0.5))
        inner = estimator.for_replicates(estimator.fit(small_replicate.data))
        assert inner.outcome_options.penalty == 0.5

    def test_multistart(self, small_replicate):
        """Test that extra starts reach the single-start optimum."""
        single = TwoStepEstimator().fit(small_replicate.data)
        multi = TwoStepEstimator(starts=3, seed=2).fit(small_replicate.data)
        np.testing.assert_allclose(
            multi.theta.as_vector(), single.theta.as_vector(), atol=1e-5
        )


class TestStatistics:
    """Test the statistic vectors fed to the bootstrap."""

    def test_mean_statistic(self, small_replicate, estimator):
        """Test that the mean statistic wraps the REG estimate."""
        fit = estimator.fit(small_replicate.data)
        value = mean_statistic()(fit, small_replicate.data)
        assert value.shape == (1,)
        assert value[0] == fit.target_mean(small_replicate.data).value

    def test_classifier_statistic(self, small_replicate, estimator):
        """Test that the classifier statistic stacks AUC and the ROC grid."""
        fit = estimator.fit(small_replicate.data)
        value = classifier_statistic(EstimatedPosterior(), [0.1, 0.5])(fit, small_replicate.data)
        assert value.shape == (3,)
        assert 0.5 <= value[0] <= 1.0
        assert value[1] <= value[2]


class TestBootstrapFit:
    """Test the bootstrap that refits inside every replicate."""

    def test_mean_interval(self, small_replicate, estimator):
        """Test that the prevalence interval is ordered and inside the unit interval."""
        result = bootstrap_fit(
            small_replicate.data, estimator, mean_statistic(), B=20, seed=1
        ).component(0)
        assert 0.0 < result.ci_low <= result.ci_high < 1.0
        assert 0.0 < result.point < 1.0
        assert len(result.replicates) + result.failures == 20

    def test_outcome_held_fixed(self, small_replicate, estimator):
        """Test that holding the outcome model fixed gives a different interval."""
        fit = estimator.fit(small_replicate.data)
        refit = bootstrap_fit(
            small_replicate.data, estimator, mean_statistic(), B=20, seed=1, fit=fit
        )
        held = bootstrap_fit(
            small_replicate.data,
            estimator,
            mean_statistic(),
            B=20,
            seed=1,
            fit=fit,
            refit_outcome=False,
        )
        np.testing.assert_array_equal(held.point, refit.point)
        assert not np.array_equal(held.replicates, refit.replicates)

    def test_thread_count_invariance(self, small_replicate, estimator):
        """Test that worker threads do not change the replicates."""
        fit = estimator.fit(small_replicate.data)
        serial = bootstrap_fit(small_replicate.data, estimator, mean_statistic(), B=8, fit=fit)
        parallel = bootstrap_fit(
            small_replicate.data, estimator, mean_statistic(), B=8, fit=fit, threads=3
        )
        np.testing.assert_array_equal(serial.replicates, parallel.replicates)

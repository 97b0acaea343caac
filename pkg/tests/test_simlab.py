"""Tests for the simulation study."""

import math
from dataclasses import replace

import numpy as np
import pytest

from shiftlab import streams
from shiftlab.core import CovariateBlock, LabeledBlock
from shiftlab.exceptions import ShiftLabError, ZeroCellError
from shiftlab.outcome_model import fit_logistic
from shiftlab.simlab import (
    THETA_NAMES,
    Domain,
    Method,
    SimConfig,
    classification_metrics,
    compute_truths,
    gen_domain,
    gen_replicate,
    ideal_tilt,
    load_sim_config,
    run_method,
    run_study,
    true_mean,
    true_source_coefficients,
    true_tilt,
)


def cell_counts(counts):
    """Labeled rows with the given numbers of (y, x1) cells in canonical order."""
    cells = np.repeat(np.arange(4), counts)
    x1 = (cells % 2).astype(float).reshape(-1, 1)
    return LabeledBlock(CovariateBlock(x1), cells // 2)


class TestSimConfig:
    """Test study configuration."""

    def test_defaults(self):
        """Test the reference design values."""
        config = SimConfig.reference_defaults()
        assert config.pi_source == (0.1, 0.4, 0.4, 0.1)
        assert config.pi_target == (0.5, 0.1, 0.1, 0.3)
        assert (config.n1, config.n0, config.reps, config.bootstrap_B) == (2000, 2000, 500, 500)
        assert config.truth_seed == 20_240_521

    def test_lambda_alias(self):
        """Test that the rate can be given under its mathematical name."""
        assert SimConfig.from_mapping({"lambda": 2.0}).lam == 2.0

    def test_unknown_key(self):
        """Test that misspelled settings are rejected."""
        with pytest.raises(ShiftLabError, match="n_1"):
            SimConfig.from_mapping({"n_1": 10})

    @pytest.mark.parametrize(
        "overrides",
        [
            {"pi_source": (0.5, 0.5, 0.5, 0.5)},
            {"sigma": (0.0, 1.0)},
            {"bootstrap_B": 1},
            {"roc_points": (0.0,)},
            {"threads": 0},
        ],
    )
    def test_invalid(self, overrides):
        """Test that invalid settings are rejected."""
        with pytest.raises(ShiftLabError):
            SimConfig.reference_defaults(**overrides)

    def test_load_yaml(self, tmp_path):
        """Test reading a YAML config with command-line overrides."""
        path = tmp_path / "study.yaml"
        path.write_text("n1: 300\nn0: 500\nlambda: 0.5\nreps: 7\n", encoding="utf-8")
        config = load_sim_config(path, reps=3, seed=None)
        assert (config.n1, config.n0, config.lam) == (300, 500, 0.5)
        assert (config.reps, config.seed) == (3, 0)

    def test_load_non_mapping(self, tmp_path):
        """Test that a YAML list is rejected."""
        path = tmp_path / "study.yaml"
        path.write_text("- 1\n- 2\n", encoding="utf-8")
        with pytest.raises(ShiftLabError, match="mapping"):
            load_sim_config(path)


class TestDataGeneration:
    """Test the data-generating process."""

    @pytest.fixture(scope="class")
    def target_sample(self):
        rng = streams.split(11, streams.REPLICATE, 0)
        return gen_domain(SimConfig.reference_defaults(), Domain.TARGET, 100_000, rng)

    def test_cell_frequencies(self, target_sample):
        """Test that cell frequencies match the target multinomial."""
        cells = 2 * target_sample.y + target_sample.covariates.x1[:, 0].astype(int)
        frequencies = np.bincount(cells, minlength=4) / cells.size
        np.testing.assert_allclose(frequencies, [0.5, 0.1, 0.1, 0.3], atol=0.01)

    def test_x21_location(self, target_sample):
        """Test that x21 centers on -gamma1 when x1 = 0."""
        x21 = target_sample.covariates.x2[:, 0]
        at_zero = target_sample.covariates.x1[:, 0] == 0
        assert x21[at_zero].mean() == pytest.approx(-7.0, abs=0.05)
        assert x21[~at_zero].mean() == pytest.approx(0.0, abs=0.05)

    def test_feature_layout(self, target_sample):
        """Test the shapes and supports of the generated features."""
        covariates = target_sample.covariates
        assert covariates.x1.shape == (100_000, 1)
        assert covariates.x2.shape == (100_000, 4)
        assert set(np.unique(covariates.x2[:, 2])) == {0.0, 1.0}
        assert covariates.x2[:, 3].min() >= 0.0

    def test_replicates_reproducible(self, small_config):
        """Test that a replicate index always gives the same data."""
        first = gen_replicate(small_config, 3)
        second = gen_replicate(small_config, 3)
        np.testing.assert_array_equal(first.data.source.y, second.data.source.y)
        np.testing.assert_array_equal(first.data.target.x2, second.data.target.x2)
        np.testing.assert_array_equal(first.target_labels, second.target_labels)

    def test_sizes(self, small_config):
        """Test that replicate sizes follow the config."""
        replicate = gen_replicate(small_config, 0)
        assert (replicate.data.n1, replicate.data.n0) == (400, 400)
        assert replicate.target_labels.shape == (400,)


class TestClosedForms:
    """Test the closed-form truths of the design."""

    def test_true_tilt(self, theta_star):
        """Test the tilt implied by the reference multinomials."""
        expected = theta_star.as_vector()
        np.testing.assert_allclose(
            true_tilt(SimConfig.reference_defaults()).as_vector(), expected, rtol=1e-12
        )

    def test_no_shift(self):
        """Test that equal multinomials give zero tilt."""
        config = SimConfig.reference_defaults(pi_target=(0.1, 0.4, 0.4, 0.1))
        np.testing.assert_allclose(true_tilt(config).as_vector(), 0.0, atol=1e-15)

    def test_label_shift(self):
        """Test that a pure label shift gives zero group slopes."""
        config = SimConfig.reference_defaults(pi_target=(0.06, 0.24, 0.56, 0.14))
        theta = true_tilt(config)
        np.testing.assert_allclose([theta.beta0[0], theta.beta1[0]], 0.0, atol=1e-12)

    def test_zero_cell(self):
        """Test that an empty cell makes the tilt undefined."""
        config = SimConfig.reference_defaults(pi_target=(0.5, 0.0, 0.2, 0.3))
        with pytest.raises(ZeroCellError):
            true_tilt(config)

    def test_true_mean(self):
        """Test the target prevalence of the reference design."""
        assert true_mean(SimConfig.reference_defaults()) == pytest.approx(0.4)

    def test_true_source_coefficients(self):
        """Test the closed-form source posterior coefficients."""
        xi = true_source_coefficients(SimConfig.reference_defaults())
        assert xi.xi0 == pytest.approx(math.log(4) + 9 / 8)
        np.testing.assert_allclose(
            xi.xi1, [-2 * math.log(4), 0.0, -0.75, 0.0, 0.0], atol=1e-12
        )

    def test_coefficients_recovered_by_fit(self):
        """Test that a large source fit recovers the closed-form coefficients."""
        config = SimConfig.reference_defaults(n1=200_000, n0=1)
        source = gen_replicate(config, 0).data.source
        fitted = fit_logistic(source).params.as_vector()
        np.testing.assert_allclose(
            fitted, true_source_coefficients(config).as_vector(), atol=0.06
        )


class TestClassificationMetrics:
    """Test recall, accuracy and precision."""

    def test_perfect(self):
        """Test that identical labels score 1 everywhere."""
        assert classification_metrics([1, 0, 1], [1, 0, 1]) == (1.0, 1.0, 1.0)

    def test_half(self):
        """Test a half-right prediction."""
        assert classification_metrics([1, 1, 0, 0], [1, 0, 1, 0]) == (0.5, 0.5, 0.5)

    def test_no_positive_predictions(self):
        """Test that precision is undefined without positive predictions."""
        metrics = classification_metrics([0, 0, 0], [1, 0, 1])
        assert metrics.precision is None
        assert metrics.recall == 0.0
        assert metrics.accuracy == pytest.approx(1 / 3)

    def test_no_positive_labels(self):
        """Test that recall is undefined without positive labels."""
        assert classification_metrics([1, 0], [0, 0]).recall is None

    def test_length_mismatch(self):
        """Test that label vectors must have equal length."""
        with pytest.raises(ShiftLabError):
            classification_metrics([1, 0], [1])


class TestIdealTilt:
    """Test the full-information tilt estimate."""

    def test_exact_frequencies(self, theta_star):
        """Test that samples matching the multinomials give the true tilt."""
        source = cell_counts([1, 4, 4, 1])
        target = cell_counts([5, 1, 1, 3])
        theta = ideal_tilt(source, target.covariates.x1, target.y)
        np.testing.assert_allclose(theta.as_vector(), theta_star.as_vector(), rtol=1e-12)

    def test_empty_cell(self):
        """Test that an empty cell is rejected."""
        source = cell_counts([1, 4, 4, 1])
        target = cell_counts([5, 0, 1, 3])
        with pytest.raises(ZeroCellError):
            ideal_tilt(source, target.covariates.x1, target.y)


class TestRunMethod:
    """Test the competing methods on one replicate."""

    @pytest.mark.parametrize("method", [Method.PROPOSED, Method.REWEIGHT, Method.NAIVE, "Oracle"])
    def test_posterior_in_unit_interval(self, small_replicate, method):
        """Test that every method returns a usable posterior."""
        result = run_method(method, small_replicate)
        posterior = result.posterior(small_replicate.data.target)
        assert posterior.shape == (400,)
        assert np.all((posterior > 0) & (posterior < 1))

    def test_ideal_has_only_theta(self, small_replicate):
        """Test that the full-information method only estimates theta."""
        result = run_method(Method.IDEAL, small_replicate)
        assert result.posterior is None
        assert result.theta.d == 1

    def test_no_shift_matches_naive(self):
        """Test that without shift the corrected posterior tracks the naive fit."""
        config = SimConfig.reference_defaults(pi_target=(0.1, 0.4, 0.4, 0.1), truth_size=20_000)
        replicate = gen_replicate(config, 0)
        target = replicate.data.target
        proposed = run_method(Method.PROPOSED, replicate).posterior(target)
        naive = run_method(Method.NAIVE, replicate).posterior(target)
        assert np.mean(np.abs(proposed - naive)) < 0.03
        assert np.mean((proposed >= 0.5) == (naive >= 0.5)) >= 0.9


class TestRunStudy:
    """Test the study runner on small designs."""

    def test_truths(self, small_config):
        """Test the ground truths of the reference design."""
        truths = compute_truths(small_config)
        assert truths["mu.REG"] == pytest.approx(0.4)
        assert truths["theta.alpha0"] == pytest.approx(math.log(5))
        assert 0.5 < truths["auc.estimated"] < 1.0
        assert 0.0 < truths["recall"] < 1.0

    def test_truths_ignore_study_settings(self, small_config):
        """Test that replicate settings do not move the ground truths."""
        other = SimConfig.reference_defaults(n1=50, n0=60, reps=9, seed=4, truth_size=20_000)
        assert compute_truths(other) == compute_truths(small_config)

    def test_rows(self, small_config):
        """Test that the table covers every method and the Proposed-only metrics."""
        table = run_study(small_config)
        assert table.failed_replicates == 0
        methods = {row.method for row in table.rows}
        assert methods == {"Proposed", "Reweight", "Naive", "Oracle"}
        assert table.row("Proposed", "mu.REG").n_reps == 2
        assert table.row("Proposed", "theta.beta1").truth == pytest.approx(math.log(12))
        assert table.row("Naive", "accuracy").cp is None
        with pytest.raises(KeyError):
            table.row("Naive", "mu.REG")

    def test_single_replicate_has_no_coverage(self):
        """Test that one replicate reports no coverage or length."""
        config = SimConfig.reference_defaults(
            n1=400, n0=400, reps=1, bootstrap_B=4, truth_size=20_000
        )
        row = run_study(config, [Method.PROPOSED]).row("Proposed", "mu.REG")
        assert row.cp is None and row.al is None

    def test_bootstrap_coverage_columns(self):
        """Test that intervals produce coverage and length."""
        config = SimConfig.reference_defaults(
            n1=400, n0=400, reps=2, bootstrap_B=4, truth_size=20_000
        )
        row = run_study(config, [Method.PROPOSED]).row("Proposed", "mu.REG")
        assert row.cp in (0.0, 0.5, 1.0)
        assert row.al > 0

    def test_ideal_rows(self):
        """Test that the ideal estimate adds theta rows only."""
        config = SimConfig.reference_defaults(
            n1=400, n0=400, reps=2, bootstrap_B=0, truth_size=20_000, include_ideal=True
        )
        metrics = {row.metric for row in run_study(config).rows if row.method == "Ideal"}
        assert metrics == {"theta.alpha0", "theta.beta0", "theta.alpha1", "theta.beta1"}

    def test_thread_count_invariance(self):
        """Test that the table does not depend on the number of threads."""
        config = SimConfig.reference_defaults(
            n1=300, n0=300, reps=3, bootstrap_B=0, truth_size=20_000
        )
        serial = run_study(config)
        parallel = run_study(replace(config, threads=3))
        assert serial.rows == parallel.rows

    def test_output_formats(self, small_config, tmp_path):
        """Test the CSV and text renderings."""
        table = run_study(small_config)
        text = table.to_csv(tmp_path / "table.csv")
        assert text.splitlines()[0].startswith("method,metric,mean,rb_percent")
        assert (tmp_path / "table.csv").read_text(encoding="utf-8") == text
        assert "RB(%)" in table.to_text()
        assert set(table.raw_frame()["method"]) == {"Proposed", "Reweight", "Naive", "Oracle"}


@pytest.mark.slow
class TestReferenceStudy:
    """Test the reference design against its published operating characteristics."""

    @pytest.fixture(scope="class")
    def table(self):
        return run_study(SimConfig.reference_defaults(reps=200, bootstrap_B=500, threads=4))

    @pytest.mark.parametrize("name", THETA_NAMES)
    def test_tilt(self, table, name):
        """Test that every tilt coordinate is nearly unbiased."""
        assert abs(table.row("Proposed", f"theta.{name}").rb_percent) < 1.5

    def test_prevalence(self, table):
        """Test that REG is nearly unbiased with close to nominal coverage."""
        row = table.row("Proposed", "mu.REG")
        assert abs(row.rb_percent) < 0.5
        assert 0.92 <= row.cp <= 0.98
        assert row.al == pytest.approx(0.081, abs=0.01)
        assert abs(table.row("Proposed", "mu.IW").rb_percent) < 0.5

    def test_classification(self, table):
        """Test that the shift correction recovers most of the lost accuracy."""
        assert table.row("Proposed", "accuracy").mean == pytest.approx(0.848, abs=0.005)
        assert table.row("Naive", "accuracy").mean == pytest.approx(0.535, abs=0.015)
        assert table.row("Proposed", "recall").mean == pytest.approx(0.789, abs=0.008)
        assert table.row("Proposed", "precision").mean == pytest.approx(0.825, abs=0.008)

    def test_auc(self, table):
        """Test that both AUC estimates are nearly unbiased."""
        estimated = table.row("Proposed", "auc.estimated")
        assert abs(estimated.rb_percent) < 0.5
        assert 0.92 <= estimated.cp <= 0.98
        assert abs(table.row("Proposed", "auc.fixed").rb_percent) < 2.0

    @pytest.mark.parametrize("u", [0.1, 0.2])
    def test_roc(self, table, u):
        """Test the estimated ROC curve at two false positive rates."""
        row = table.row("Proposed", f"roc.estimated@{u}")
        assert abs(row.rb_percent) < 1.5
        assert 0.92 <= row.cp <= 0.98


@pytest.mark.slow
class TestUnbalancedStudy:
    """Test the design with a small source sample."""

    @pytest.fixture(scope="class")
    def table(self):
        config = SimConfig.reference_defaults(n1=500, n0=2000, reps=200, bootstrap_B=500, threads=4)
        return run_study(config)

    def test_accuracy_ordering(self, table):
        """Test that the corrected classifier has the smallest accuracy error."""
        mse = {m: table.row(m, "accuracy").mse_x1000 for m in ("Proposed", "Reweight", "Naive")}
        assert mse["Proposed"] < mse["Reweight"] < mse["Naive"]

    def test_prevalence_coverage(self, table):
        """Test that REG keeps close to nominal coverage."""
        assert 0.92 <= table.row("Proposed", "mu.REG").cp <= 0.98

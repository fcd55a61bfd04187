"""Tests for synthetic data and contamination mechanisms."""

import numpy as np
import pytest

from qple.exceptions import ContractError
from qple.models import Dataset, ErrorKind, ExactCovariate, NoisyCovariate, PartiallyMissingCovariate
from qple.sim import (
    Case,
    ErrorSpec,
    apply_measurement_error,
    apply_missingness,
    complete_cases,
    generate_dataset,
    naive_measurement_error,
)
from qple.sim.generators import count_incomplete, full_data


@pytest.fixture
def case_i():
    return generate_dataset(Case.I, 101, seed=4)


@pytest.fixture
def franke_binomial():
    return generate_dataset(Case.FRANKE_BINOMIAL, 300, seed=4)


class TestGenerateDataset:
    """Tests for generate_dataset function."""

    def test_deterministic(self):
        """Test a fixed seed reproduces the dataset."""
        first = generate_dataset(Case.II, 50, seed=9)
        second = generate_dataset(Case.II, 50, seed=9)
        np.testing.assert_array_equal(first.y, second.y)
        np.testing.assert_array_equal(first.true_covariates, second.true_covariates)

    def test_seeds_differ(self):
        """Test different seeds give different covariates."""
        first = generate_dataset(Case.II, 50, seed=9)
        second = generate_dataset(Case.II, 50, seed=10)
        assert not np.allclose(first.true_covariates, second.true_covariates)

    def test_case_i_response_mean(self):
        """Test E[y] = 2 E[p(X)] = 0.72 for case i."""
        dataset = generate_dataset(Case.I, 20000, seed=1)
        assert dataset.y.mean() == pytest.approx(0.72, abs=0.03)
        assert dataset.y.min() >= 0 and dataset.y.max() <= 2

    def test_bivariate_shape(self, franke_binomial):
        """Test Franke cases draw two covariates and five trials."""
        assert franke_binomial.true_covariates.shape == (300, 2)
        assert franke_binomial.y.max() <= 5
        assert all(isinstance(o, ExactCovariate) for o in franke_binomial.observations)

    def test_rejects_empty(self):
        """Test n = 0 raises ContractError."""
        with pytest.raises(ContractError):
            generate_dataset(Case.I, 0)


class TestMeasurementError:
    """Tests for apply_measurement_error and naive_measurement_error."""

    def test_five_exact_subjects(self, case_i):
        """Test exactly five subjects stay exact and the rest share one error model."""
        contaminated = apply_measurement_error(case_i, ErrorSpec.from_ratio("normal", 0.25), 5, seed=2)
        exact = [o for o in contaminated.observations if isinstance(o, ExactCovariate)]
        noisy = [o for o in contaminated.observations if isinstance(o, NoisyCovariate)]
        assert len(exact) == 5
        assert len(noisy) == 96
        assert all(o.error_model is noisy[0].error_model for o in noisy)
        np.testing.assert_allclose(noisy[0].error_model.scale, [np.sqrt(0.25 / 12.0)])

    def test_uniform_error_is_bounded(self, case_i):
        """Test uniform contamination stays within delta of the truth."""
        error = ErrorSpec.from_ratio("uniform", 0.25)
        contaminated = apply_measurement_error(case_i, error, 5, seed=2)
        for obs, x in zip(contaminated.observations, case_i.true_covariates):
            if isinstance(obs, NoisyCovariate):
                assert np.all(np.abs(obs.x_err - x) <= 0.25)

    def test_assumed_family(self, case_i):
        """Test a misspecified fit uses the assumed family at matched variance."""
        error = ErrorSpec.from_ratio("normal", 0.25)
        error.assumed = ErrorKind.UNIFORM
        contaminated = apply_measurement_error(case_i, error, 5, seed=2)
        model = next(o.error_model for o in contaminated.observations if isinstance(o, NoisyCovariate))
        assert model.kind == ErrorKind.UNIFORM
        np.testing.assert_allclose(model.scale, [0.25])

    def test_zero_scale_is_degenerate(self, case_i):
        """Test a zero error scale leaves everyone exact with a warning."""
        contaminated = apply_measurement_error(case_i, ErrorSpec(ErrorKind.NORMAL, 0.0), 5)
        assert all(isinstance(o, ExactCovariate) for o in contaminated.observations)
        assert any("degenerate" in w for w in contaminated.warnings)

    def test_naive_treats_x_err_as_exact(self, case_i):
        """Test the naive dataset keeps the contaminated values."""
        contaminated = apply_measurement_error(case_i, ErrorSpec.from_ratio("normal", 0.25), 5, seed=2)
        naive = naive_measurement_error(contaminated)
        for before, after in zip(contaminated.observations, naive.observations):
            assert isinstance(after, ExactCovariate)
            if isinstance(before, NoisyCovariate):
                np.testing.assert_array_equal(after.x, before.x_err)

    def test_requires_truth(self, case_i):
        """Test contamination needs the true covariates."""
        bare = Dataset(case_i.y, case_i.observations, case_i.family, case_i.kernel)
        with pytest.raises(ContractError):
            apply_measurement_error(bare, ErrorSpec.from_ratio("normal", 0.25), 5)


class TestMissingness:
    """Tests for apply_missingness and complete_cases."""

    def test_only_large_responses_lose_covariates(self, franke_binomial):
        """Test subjects with y > 3 lose x1, x2 or both."""
        masked = apply_missingness(franke_binomial, seed=3)
        for y, obs in zip(masked.y, masked.observations):
            if y > 3:
                assert isinstance(obs, PartiallyMissingCovariate)
                assert obs.missing.any()
            else:
                assert isinstance(obs, ExactCovariate)

    def test_incomplete_subjects_share_one_model(self, franke_binomial):
        """Test all incomplete subjects share the covariate model."""
        masked = apply_missingness(franke_binomial, seed=3)
        models = {id(o.model) for o in masked.observations if isinstance(o, PartiallyMissingCovariate)}
        assert len(models) == 1

    def test_all_three_patterns_occur(self, franke_binomial):
        """Test x1-only, x2-only and both-missing masks all appear."""
        masked = apply_missingness(franke_binomial, seed=3)
        patterns = {
            tuple(o.missing) for o in masked.observations if isinstance(o, PartiallyMissingCovariate)
        }
        assert patterns == {(True, False), (False, True), (True, True)}

    def test_no_qualifying_subject(self, franke_binomial):
        """Test a dataset with small responses is unchanged."""
        quiet = Dataset(
            np.zeros(franke_binomial.n),
            franke_binomial.observations,
            franke_binomial.family,
            franke_binomial.kernel,
            true_covariates=franke_binomial.true_covariates,
        )
        assert count_incomplete(apply_missingness(quiet)) == 0

    def test_complete_cases(self, franke_binomial):
        """Test complete_cases drops exactly the incomplete subjects."""
        masked = apply_missingness(franke_binomial, seed=3)
        kept = complete_cases(masked)
        assert kept.n == masked.n - count_incomplete(masked)
        assert count_incomplete(kept) == 0

    def test_full_data_restores_truth(self, franke_binomial):
        """Test full_data puts every subject at its true covariate."""
        masked = apply_missingness(franke_binomial, seed=3)
        restored = full_data(masked)
        np.testing.assert_array_equal(restored.observations[0].x, franke_binomial.true_covariates[0])
        assert count_incomplete(restored) == 0

    def test_univariate_rejected(self, case_i):
        """Test missingness needs bivariate covariates."""
        with pytest.raises(ContractError):
            apply_missingness(case_i)

    @pytest.mark.slow
    @pytest.mark.parametrize("case,expected", [(Case.FRANKE_BINOMIAL, 47), (Case.FRANKE_POISSON, 61)])
    def test_average_incomplete_count(self, case, expected):
        """Test the average number of incomplete subjects out of 300."""
        counts = [count_incomplete(apply_missingness(generate_dataset(case, 300, s), s)) for s in range(20)]
        assert np.mean(counts) == pytest.approx(expected, rel=0.3)

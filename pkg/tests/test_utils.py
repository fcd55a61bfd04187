"""Tests for utility functions."""

import numpy as np
import pytest

from qple.exceptions import ContractError
from qple.utils import (
    argmin_prefer_larger,
    lambda_grid,
    parse_lambda_grid,
    segment_logsumexp,
    segment_softmax,
    segment_sum,
    spawn_rng,
)


class TestSegments:
    """Tests for the per-subject segment reductions."""

    offsets = np.array([0, 2, 3, 6])

    def test_segment_sum(self):
        """Test sums over ragged segments."""
        values = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        np.testing.assert_allclose(segment_sum(values, self.offsets), [3.0, 3.0, 15.0])

    def test_segment_logsumexp_matches_direct(self):
        """Test against a direct log(sum(exp))."""
        values = np.array([0.1, -0.4, 2.0, 1.0, 1.5, -3.0])
        expected = [np.log(np.exp(values[0:2]).sum()), 2.0, np.log(np.exp(values[3:6]).sum())]
        np.testing.assert_allclose(segment_logsumexp(values, self.offsets), expected)

    def test_segment_logsumexp_is_stable(self):
        """Test large values do not overflow."""
        values = np.array([1000.0, 1000.0, -1000.0, 800.0, 800.0, 800.0])
        result = segment_logsumexp(values, self.offsets)
        np.testing.assert_allclose(result, [1000.0 + np.log(2), -1000.0, 800.0 + np.log(3)])

    def test_segment_softmax_normalizes(self):
        """Test each segment sums to one."""
        values = np.array([0.3, 1.2, -5.0, 0.0, 2.0, 4.0])
        weights = segment_softmax(values, self.offsets)
        np.testing.assert_allclose(segment_sum(weights, self.offsets), 1.0)
        assert weights[2] == pytest.approx(1.0)
        assert weights[5] > weights[4] > weights[3]


class TestSpawnRng:
    """Tests for spawn_rng function."""

    def test_same_keys_are_reproducible(self):
        """Test the same seed and keys give the same stream."""
        first = spawn_rng(3, 1, 2).normal(size=5)
        second = spawn_rng(3, 1, 2).normal(size=5)
        np.testing.assert_array_equal(first, second)

    def test_different_keys_differ(self):
        """Test sibling streams are distinct."""
        first = spawn_rng(3, 1, 2).normal(size=5)
        second = spawn_rng(3, 1, 3).normal(size=5)
        assert not np.allclose(first, second)


class TestLambdaGrid:
    """Tests for lambda_grid and parse_lambda_grid."""

    def test_default_grid(self):
        """Test the default grid is ascending and log-spaced."""
        grid = lambda_grid()
        assert np.all(np.diff(grid) > 0)
        np.testing.assert_allclose(np.diff(np.log10(grid)), np.diff(np.log10(grid))[0])

    def test_single_point(self):
        """Test a one-point grid."""
        np.testing.assert_allclose(lambda_grid(-2.0, -2.0, 1), [0.01])

    @pytest.mark.parametrize("lo,hi,count", [(0.0, 1.0, 0), (1.0, 0.0, 5)])
    def test_invalid_grid(self, lo, hi, count):
        """Test empty or reversed grids are rejected."""
        with pytest.raises(ContractError):
            lambda_grid(lo, hi, count)

    def test_parse(self):
        """Test parsing lo:hi:count in log10 units."""
        grid = parse_lambda_grid("-8:1:40")
        assert len(grid) == 40
        assert grid[0] == pytest.approx(1e-8)
        assert grid[-1] == pytest.approx(10.0)

    @pytest.mark.parametrize("text", ["-8:1", "a:1:4", "-8:1:2.5", ""])
    def test_parse_malformed(self, text):
        """Test malformed grid strings raise ContractError."""
        with pytest.raises(ContractError):
            parse_lambda_grid(text)


class TestArgminPreferLarger:
    """Tests for argmin_prefer_larger function."""

    def test_unique_minimum(self):
        """Test a unique minimum."""
        assert argmin_prefer_larger(np.array([3.0, 1.0, 2.0])) == 1

    def test_ties_go_to_larger_lambda(self):
        """Test ties resolve to the later index."""
        assert argmin_prefer_larger(np.array([1.0, 2.0, 1.0, 5.0])) == 2

    def test_skips_non_finite(self):
        """Test NaN and infinite entries are ignored."""
        assert argmin_prefer_larger(np.array([np.nan, 2.0, -np.inf, 3.0])) == 1

    def test_all_nan(self):
        """Test an all-NaN curve raises ContractError."""
        with pytest.raises(ContractError):
            argmin_prefer_larger(np.array([np.nan, np.nan]))

"""Tests for quadrature rules."""

import numpy as np
import pytest
from scipy.stats import norm

from qple.exceptions import ContractError, DomainError, RuleConstructionError
from qple.quadrature import (
    CustomDensity,
    Discrete,
    IndependentChain,
    MultivariateNormal,
    Normal,
    QuadratureMethod,
    QuadratureRule,
    Uniform,
    gauss_rule,
    grid_rule,
    multivariate_rule,
    parse_distribution,
    rule_for_distribution,
)


def _moment(rule: QuadratureRule, power: int) -> float:
    return float(rule.weights @ rule.nodes[:, 0] ** power)


def _close(value: float, expected: float) -> bool:
    return abs(value - expected) <= 1e-8 * (1.0 + abs(expected))


class TestQuadratureRule:
    """Tests for the rule container."""

    def test_weights_are_normalized(self):
        """Test weights are rescaled to sum to one."""
        rule = QuadratureRule([0.0, 1.0], [1.0, 3.0])
        np.testing.assert_allclose(rule.weights, [0.25, 0.75])
        assert rule.nodes.shape == (2, 1)

    def test_non_positive_weight(self):
        """Test zero weights are rejected."""
        with pytest.raises(ContractError):
            QuadratureRule([0.0, 1.0], [1.0, 0.0])

    def test_length_mismatch(self):
        """Test nodes and weights must match."""
        with pytest.raises(ContractError):
            QuadratureRule([0.0, 1.0], [1.0])

    def test_point_rule(self):
        """Test a one-node rule for an exact covariate."""
        rule = QuadratureRule.point([0.2, 0.4])
        assert rule.m == 1
        assert rule.dim == 2

    def test_merged(self):
        """Test identical nodes are merged with summed weights."""
        rule = QuadratureRule([0.1, 0.2, 0.1], [0.25, 0.5, 0.25]).merged()
        np.testing.assert_allclose(rule.nodes[:, 0], [0.1, 0.2])
        np.testing.assert_allclose(rule.weights, [0.5, 0.5])


class TestGaussRule:
    """Tests for Gaussian rules."""

    def test_standard_normal_two_nodes(self):
        """Test the 2-node normal rule is +-1 with equal weights."""
        rule = gauss_rule(Normal(0.0, 1.0), 2)
        np.testing.assert_allclose(np.sort(rule.nodes[:, 0]), [-1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(rule.weights, [0.5, 0.5], atol=1e-12)

    def test_uniform_two_nodes(self):
        """Test the 2-node uniform rule is 1/2 -+ 1/(2 sqrt 3)."""
        rule = gauss_rule(Uniform(0.0, 1.0), 2)
        offset = 1.0 / (2.0 * np.sqrt(3.0))
        np.testing.assert_allclose(np.sort(rule.nodes[:, 0]), [0.5 - offset, 0.5 + offset], atol=1e-12)

    def test_single_node_is_mean(self):
        """Test m = 1 places one node at the mean."""
        rule = gauss_rule(Normal(0.7, 2.0), 1)
        assert rule.nodes[0, 0] == pytest.approx(0.7)
        assert rule.weights[0] == 1.0

    @pytest.mark.parametrize("m", range(1, 9))
    def test_normal_exactness(self, m):
        """Test exactness for monomials up to degree 2m - 1 under a normal law."""
        dist = Normal(0.3, 1.7)
        rule = gauss_rule(dist, m)
        for power in range(2 * m):
            assert _close(_moment(rule, power), norm(0.3, 1.7).moment(power)), power

    @pytest.mark.parametrize("m", range(1, 9))
    def test_uniform_exactness(self, m):
        """Test exactness for monomials up to degree 2m - 1 under a uniform law."""
        low, high = -1.0, 2.0
        rule = gauss_rule(Uniform(low, high), m)
        for power in range(2 * m):
            expected = (high ** (power + 1) - low ** (power + 1)) / ((power + 1) * (high - low))
            assert _close(_moment(rule, power), expected), power

    @pytest.mark.parametrize("m", range(2, 7))
    def test_custom_density_exactness(self, m):
        """Test the moment-based rule for a Beta(2, 2) density."""
        dist = CustomDensity(lambda x: 6.0 * x * (1.0 - x), 0.0, 1.0, 0.5, np.sqrt(0.05))
        rule = gauss_rule(dist, m)
        assert np.all((rule.nodes > 0.0) & (rule.nodes < 1.0))
        for power in range(2 * m):
            assert _close(_moment(rule, power), 6.0 / ((power + 2) * (power + 3))), power

    def test_discrete_with_fewer_nodes(self):
        """Test a reduced rule for a ten-point discrete law matches low moments."""
        values = tuple(float(v) for v in range(10))
        dist = Discrete(values, tuple([0.1] * 10))
        rule = gauss_rule(dist, 3)
        assert rule.m == 3
        for power in range(6):
            expected = float(np.mean(np.arange(10.0) ** power))
            assert _close(_moment(rule, power), expected), power

    def test_discrete_returns_own_support(self):
        """Test a discrete law with few values keeps its support."""
        rule = rule_for_distribution(Discrete((0.0, 1.0), (0.3, 0.7)), 5, QuadratureMethod.GRID)
        np.testing.assert_allclose(rule.nodes[:, 0], [0.0, 1.0])
        np.testing.assert_allclose(rule.weights, [0.3, 0.7])

    @pytest.mark.parametrize("m", [0, 21])
    def test_node_count_out_of_range(self, m):
        """Test node counts outside 1..20 are rejected."""
        with pytest.raises(ContractError):
            gauss_rule(Normal(), m)

    def test_zero_scale_normal(self):
        """Test a zero-scale normal law raises DomainError."""
        with pytest.raises(DomainError):
            Normal(0.0, 0.0)


class TestGridRule:
    """Tests for equally spaced rules."""

    def test_normal_three_nodes(self):
        """Test the 3-node grid for N(0, 1) spans +-3 sd."""
        rule = grid_rule(Normal(0.0, 1.0), 3)
        np.testing.assert_allclose(rule.nodes[:, 0], [-3.0, 0.0, 3.0])
        np.testing.assert_allclose(rule.weights, [0.01087, 0.97826, 0.01087], atol=1e-5)

    def test_uniform_five_nodes(self):
        """Test the 5-node grid for U(0, 1) has equal weights."""
        rule = grid_rule(Uniform(0.0, 1.0), 5)
        np.testing.assert_allclose(rule.weights, 0.2)

    def test_discrete_has_no_density(self):
        """Test grid rules reject discrete laws."""
        with pytest.raises(RuleConstructionError):
            grid_rule(Discrete((0.0, 1.0), (0.5, 0.5)), 3)


class TestMultivariateRule:
    """Tests for recursive product rules."""

    def test_independent_product(self):
        """Test an independent product rule has product weights."""
        chain = IndependentChain((Normal(0.0, 1.0), Uniform(0.0, 1.0)))
        rule = multivariate_rule(chain, [2, 2])
        assert rule.m == 4
        np.testing.assert_allclose(rule.weights, 0.25)

    def test_correlated_normal_moments(self):
        """Test second moments of a correlated normal are reproduced."""
        joint = MultivariateNormal(np.zeros(2), np.array([[1.0, 0.5], [0.5, 1.0]]))
        rule = multivariate_rule(joint, [3, 3])
        x1, x2 = rule.nodes[:, 0], rule.nodes[:, 1]
        assert rule.weights @ (x1 * x2) == pytest.approx(0.5)
        assert rule.weights @ (x2**2) == pytest.approx(1.0)
        assert rule.weights @ x2 == pytest.approx(0.0, abs=1e-12)

    def test_count_mismatch(self):
        """Test one node count per coordinate is required."""
        with pytest.raises(ContractError):
            multivariate_rule(IndependentChain((Normal(), Normal())), [3])

    def test_singular_covariance(self):
        """Test a singular covariance is rejected."""
        with pytest.raises(RuleConstructionError):
            MultivariateNormal(np.zeros(2), np.ones((2, 2)))


class TestParseDistribution:
    """Tests for distribution flags."""

    def test_normal(self):
        """Test normal:mu:sigma."""
        assert parse_distribution("normal:0.5:2") == Normal(0.5, 2.0)

    def test_uniform(self):
        """Test uniform:low:high."""
        assert parse_distribution("uniform:-1:1") == Uniform(-1.0, 1.0)

    def test_discrete(self):
        """Test discrete:values:probs."""
        dist = parse_distribution("discrete:0,1:0.3,0.7")
        assert dist.values == (0.0, 1.0)
        assert dist.probs == (0.3, 0.7)

    @pytest.mark.parametrize("text", ["beta:1:2", "normal:0:-1", "normal:a:1", "uniform:1"])
    def test_invalid(self, text):
        """Test malformed flags raise ContractError."""
        with pytest.raises(ContractError):
            parse_distribution(text)

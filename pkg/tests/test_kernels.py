"""Tests for kernels, null spaces and covariate scaling."""

import numpy as np
import pytest

from qple.exceptions import ContractError, DegenerateDesignError, DomainError
from qple.kernels import (
    SSANOVA,
    CovariateScaler,
    CubicProduct,
    CubicSpline,
    GaussianRBF,
    KernelBlock,
    ThinPlate2D,
    cross_gram,
    gram,
    kernel_from_dict,
    null_basis,
    null_design,
    parse_kernel,
    ssanova_gram,
)


class TestKernelValues:
    """Tests for kernel evaluations."""

    def test_rbf_diagonal_is_one(self):
        """Test K(s, s) = 1 for the Gaussian kernel."""
        points = np.random.default_rng(0).uniform(size=(5, 2))
        np.testing.assert_allclose(np.diag(gram(points, GaussianRBF(0.3))), 1.0)

    def test_cubic_reflection_symmetry(self):
        """Test K(s, t) = K(1 - s, 1 - t) for the cubic kernel."""
        points = np.array([[0.0], [0.5], [1.0], [0.2]])
        k = CubicSpline()
        np.testing.assert_allclose(gram(points, k), gram(1.0 - points, k), atol=1e-15)

    def test_tps_vanishes_at_unit_distance(self):
        """Test E(r) = 0 at r = 1 and r = 0."""
        k = ThinPlate2D()
        assert cross_gram([[0.0, 0.0]], [[1.0, 0.0]], k)[0, 0] == pytest.approx(0.0)
        assert cross_gram([[0.3, 0.3]], [[0.3, 0.3]], k)[0, 0] == 0.0

    def test_tps_value(self):
        """Test E(r) = r^2 log r at r = 2."""
        value = cross_gram([[0.0, 0.0]], [[2.0, 0.0]], ThinPlate2D())[0, 0]
        assert value == pytest.approx(4.0 * np.log(2.0))

    def test_cubic_gram_is_positive_semidefinite(self):
        """Test the cubic Gram matrix has no negative eigenvalues."""
        points = np.linspace(0.0, 1.0, 12)
        eigenvalues = np.linalg.eigvalsh(gram(points, CubicSpline()))
        assert eigenvalues.min() > -1e-12

    def test_gram_is_symmetric(self):
        """Test Gram matrices are exactly symmetric."""
        points = np.random.default_rng(1).uniform(size=(6, 2))
        matrix = gram(points, ThinPlate2D())
        np.testing.assert_array_equal(matrix, matrix.T)

    def test_cubic_outside_unit_interval(self):
        """Test points outside [0, 1] raise DomainError."""
        with pytest.raises(DomainError):
            gram([0.2, 1.5], CubicSpline())

    def test_wrong_dimension(self):
        """Test a 1-D point set is rejected by the TPS kernel."""
        with pytest.raises(ContractError):
            gram([0.1, 0.2], ThinPlate2D())

    def test_product_kernel(self):
        """Test the product kernel multiplies the coordinate kernels."""
        points = np.array([[0.1, 0.7], [0.4, 0.2], [0.9, 0.5]])
        k = CubicSpline()
        expected = gram(points[:, :1], k) * gram(points[:, 1:], k)
        np.testing.assert_allclose(gram(points, CubicProduct()), expected)


class TestNullBasis:
    """Tests for null-space designs."""

    def test_cubic_columns(self):
        """Test the cubic null space is {1, x - 1/2}."""
        basis = null_basis([0.5, 0.0, 1.0], CubicSpline())
        np.testing.assert_allclose(basis, [[1.0, 0.0], [1.0, -0.5], [1.0, 0.5]])

    def test_tps_columns(self):
        """Test the TPS null space is {1, x1, x2}."""
        points = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(null_basis(points, ThinPlate2D())[:, 1:], points)

    def test_rbf_constant_only(self):
        """Test the Gaussian kernel has a constant null space."""
        assert null_basis([0.1, 0.2], GaussianRBF()).shape == (2, 1)

    def test_identical_points_are_degenerate(self):
        """Test identical TPS points make the null space rank deficient."""
        with pytest.raises(DegenerateDesignError) as exc:
            null_basis([[0.3, 0.3]] * 4, ThinPlate2D())
        assert exc.value.rank == 1
        assert exc.value.expected == 3

    def test_too_few_points_not_checked(self):
        """Test fewer points than null functions is not an error here."""
        assert null_basis([[0.3, 0.3]], ThinPlate2D()).shape == (1, 3)


class TestSSANOVA:
    """Tests for tensor-sum kernels."""

    def test_gram_is_weighted_sum(self):
        """Test the SS-ANOVA Gram is linear in the block weights."""
        points = np.random.default_rng(2).uniform(size=(6, 2))
        b1 = KernelBlock(CubicSpline(), (0,))
        b2 = KernelBlock(CubicSpline(), (1,))
        combined = ssanova_gram(points, [b1, b2], [2.0, 3.0])
        expected = 2.0 * gram(points[:, :1], CubicSpline()) + 3.0 * gram(points[:, 1:], CubicSpline())
        np.testing.assert_allclose(combined, expected)

    def test_null_columns_collect_block_terms(self):
        """Test block null spaces map to global coordinates without duplicates."""
        k = SSANOVA(
            (KernelBlock(CubicSpline(), (0,)), KernelBlock(CubicSpline(), (1,))),
            (1.0, 1.0),
            linear=(0, 2),
        )
        design = null_design(np.full((4, 3), 0.25), k)
        assert design.shape == (4, 4)

    def test_requires_blocks(self):
        """Test an empty block list is rejected."""
        with pytest.raises(ContractError):
            SSANOVA((), ())

    def test_positive_weights(self):
        """Test non-positive block weights are rejected."""
        with pytest.raises(DomainError):
            SSANOVA((KernelBlock(CubicSpline(), (0,)),), (0.0,))


class TestParseKernel:
    """Tests for kernel flags."""

    @pytest.mark.parametrize(
        "text,expected",
        [("cubic", CubicSpline()), ("tps", ThinPlate2D()), ("rbf:0.3", GaussianRBF(0.3)), ("product", CubicProduct())],
    )
    def test_simple(self, text, expected):
        """Test simple kernel names."""
        assert parse_kernel(text) == expected

    def test_ssanova(self):
        """Test an SS-ANOVA flag with weights and linear terms."""
        k = parse_kernel("ssanova:cubic@1+cubic@2+product@1.2|theta=1,1,0.5|linear=3")
        assert isinstance(k, SSANOVA)
        assert [block.coords for block in k.blocks] == [(0,), (1,), (0, 1)]
        assert k.thetas == (1.0, 1.0, 0.5)
        assert k.linear == (2,)

    def test_dict_round_trip(self):
        """Test kernel_from_dict inverts to_dict."""
        for text in ("cubic", "tps", "rbf:0.5", "ssanova:cubic@1+product@1.2|theta=2,0.5"):
            k = parse_kernel(text)
            assert kernel_from_dict(k.to_dict()) == k

    @pytest.mark.parametrize("text", ["spline", "rbf:-1", "ssanova:spline@1", "ssanova:cubic@0", "cubic:2"])
    def test_invalid(self, text):
        """Test malformed kernel flags raise DomainError."""
        with pytest.raises(DomainError):
            parse_kernel(text)


class TestCovariateScaler:
    """Tests for the unit-cube covariate map."""

    def test_fit_with_margin(self):
        """Test the fitted range is widened by the margin."""
        scaler = CovariateScaler.fit([[0.0], [1.0]], margin=0.05)
        np.testing.assert_allclose(scaler.low, [-0.05])
        np.testing.assert_allclose(scaler.high, [1.05])
        assert scaler.transform([[0.0], [1.0]]).min() > 0.0

    def test_round_trip(self):
        """Test inverse(transform(x)) = x."""
        points = np.random.default_rng(3).normal(size=(5, 2))
        scaler = CovariateScaler.fit(points)
        np.testing.assert_allclose(scaler.inverse(scaler.transform(points)), points)

    def test_constant_coordinate(self):
        """Test a constant coordinate still gets a positive width."""
        scaler = CovariateScaler.fit([[2.0], [2.0]])
        assert scaler.high[0] - scaler.low[0] == pytest.approx(1.0)

    def test_domain_is_covered(self):
        """Test a declared domain widens the fitted range."""
        scaler = CovariateScaler.fit([[0.4], [0.6]], margin=0.0, domain=(np.array([0.0]), np.array([1.0])))
        np.testing.assert_allclose([scaler.low[0], scaler.high[0]], [0.0, 1.0])

    def test_dimension_mismatch(self):
        """Test transforming points of the wrong dimension."""
        with pytest.raises(ContractError):
            CovariateScaler.identity(2).transform([[0.1]])

    def test_dict_round_trip(self):
        """Test to_dict / from_dict."""
        scaler = CovariateScaler.fit([[0.0, 1.0], [2.0, 3.0]])
        restored = CovariateScaler.from_dict(scaler.to_dict())
        np.testing.assert_allclose(restored.low, scaler.low)
        np.testing.assert_allclose(restored.high, scaler.high)

"""
Test suite for scaling functions, stable densities and scale calibration
"""

import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from renewal import dist, exact, stable
from renewal.errors import ScaleError
from renewal.stable import ScaleBranch, StableParams


@pytest.fixture
def two_point():
    return dist.lattice_from_table({1: 0.5, 2: 0.5})


@pytest.fixture
def heavy():
    """Fixture providing p(k) ~ k^-5/2 (tail index 3/2)."""
    return dist.pareto_lattice(1.5, 100_000)


class TestScaleFunction:
    """Test suite for psi and b."""

    def test_finite_variance_branch(self, two_point):
        """Test psi(t) = sigma sqrt(t) with sigma = 1/2."""
        scale = stable.scale_for(two_point)
        assert scale.branch == ScaleBranch.FINITE_VARIANCE
        assert stable.psi(scale, 4.0) == pytest.approx(1.0)
        assert scale(100.0) == pytest.approx(5.0)

    def test_stable_branch(self, heavy):
        """Test b(t) = (c t)^(1/alpha) from the declared tail."""
        scale = stable.scale_for(heavy)
        assert scale.branch == ScaleBranch.STABLE
        c = heavy.plus_tail.constant
        assert stable.psi(scale, 1000.0) == pytest.approx((c * 1000.0) ** (1 / 1.5))

    def test_calibration_factor_multiplies(self, two_point):
        """Test that a calibrated scale is the raw one times the factor."""
        scale = stable.scale_for(two_point)
        assert scale.calibrated(2.0)(9.0) == pytest.approx(2.0 * scale(9.0))

    def test_psi_needs_positive_argument(self, two_point):
        """Test that psi(0) is rejected."""
        with pytest.raises(ScaleError):
            stable.psi(stable.scale_for(two_point), 0.0)

    def test_degenerate_law_has_no_scale(self):
        """Test that zero variance is rejected."""
        with pytest.raises(ScaleError, match="zero variance"):
            stable.scale_for(dist.lattice([1.0], offset=1))

    def test_generalized_inverse(self):
        """Test inf{x : x^-2 < 1/100} = 10."""
        x = stable.generalized_inverse(lambda t: min(1.0, t ** -2) if t > 0 else 1.0, 100.0)
        assert x == pytest.approx(10.0, rel=1e-9)

    def test_concrete_star_tail(self, two_point):
        """Test b(t) from the exact two-sided tail of a bounded law."""
        scale = stable.ScaleFunction(ScaleBranch.STABLE, star_tail=stable.star_tail_of(two_point))
        # F*(x) = 1/2 on (1, 2] and 0 beyond 2
        assert scale(4.0) == pytest.approx(2.0, rel=1e-9)


class TestStableParams:
    """Test suite for limit law parameters."""

    def test_one_sided_tail_is_totally_skewed(self, heavy):
        """Test that a right tail alone gives rho = 1."""
        params = stable.params_for(heavy)
        assert params.alpha == 1.5
        assert params.rho == 1.0

    def test_finite_variance_gives_normal(self, two_point):
        """Test that the normal law is the finite-variance limit."""
        assert stable.params_for(two_point).is_normal

    def test_index_out_of_range(self):
        """Test that alpha outside (1, 2] is rejected."""
        with pytest.raises(ScaleError):
            StableParams(alpha=2.5)
        with pytest.raises(ScaleError):
            StableParams(alpha=1.5, rho=1.5)

    def test_left_tail_gives_negative_skew(self):
        """Test that a heavy left tail alone selects the stable branch with rho = -1."""
        model = dist.lattice_from_table({1: 0.5, 2: 0.5}, minus_tail=dist.TailMajorant(1.8))
        scale = stable.scale_for(model)
        assert scale.branch == ScaleBranch.STABLE
        assert stable.params_for(model).rho == -1.0


class TestDensities:
    """Test suite for densities and distribution functions."""

    @pytest.mark.parametrize("u", [0.0, 1.0, 3.0])
    def test_cauchy_sanity_point(self, u):
        """Test the inversion integral at alpha = 1 against the Cauchy density."""
        assert stable.inversion_density(1.0, 0.0, u) == pytest.approx(1.0 / (math.pi * (1.0 + u * u)), abs=1e-6)

    def test_symmetric_density_at_origin(self):
        """Test f(0) = Gamma(1 + 1/alpha) / pi for the symmetric law."""
        alpha = 1.5
        value = stable.stable_density(StableParams(alpha, 0.0), 0.0)
        assert value == pytest.approx(special.gamma(1.0 + 1.0 / alpha) / math.pi, rel=1e-5)

    def test_normal_params_use_gaussian(self):
        """Test that alpha = 2 maps to the standard normal."""
        assert stable.stable_density(StableParams(), 0.3) == pytest.approx(stats.norm.pdf(0.3))
        assert stable.stable_cdf(StableParams(), 1.0) == pytest.approx(stats.norm.cdf(1.0))

    def test_symmetric_cdf_median(self):
        """Test that the symmetric law has median 0."""
        assert stable.stable_cdf(StableParams(1.5, 0.0), 0.0) == pytest.approx(0.5, abs=1e-9)

    def test_cdf_is_monotone(self):
        """Test that the skewed distribution function increases."""
        params = StableParams(1.5, 1.0)
        values = [stable.stable_cdf(params, u) for u in (-3.0, -1.0, 0.0, 1.0, 3.0)]
        assert values == sorted(values)
        assert 0.0 <= values[0] < values[-1] <= 1.0

    @pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
    def test_tail_constant(self, alpha):
        """Test C_alpha = 2 Gamma(alpha) sin(pi alpha / 2) / pi."""
        expected = 2.0 * special.gamma(alpha) * math.sin(math.pi * alpha / 2.0) / math.pi
        assert stable.stable_tail_constant(alpha) == pytest.approx(expected, rel=1e-12)

    def test_normal_tail_mass(self):
        """Test the two-sided normal mass outside [-2, 2]."""
        assert stable.tail_mass(StableParams(), 2.0) == pytest.approx(2 * stats.norm.sf(2.0))

    @pytest.mark.parametrize("rho", [0.0, 1.0])
    def test_density_integrates_to_one(self, rho):
        """Test that the alpha = 3/2 density over [-50, 50] plus the tail mass beyond is 1."""
        params = StableParams(1.5, rho)
        u = np.linspace(-50.0, 50.0, 2001)
        f = np.array([stable.stable_density(params, v) for v in u])
        total = integrate.simpson(f, x=u) + stable.tail_mass(params, 50.0)
        assert total == pytest.approx(1.0, abs=1e-4)


class TestWindowApproximation:
    """Test suite for the Stone-Shepp window term."""

    def test_window_at_the_mean(self, two_point):
        """Test (delta / psi(n)) phi(0) at x = mu n."""
        scale = stable.scale_for(two_point)
        value = stable.stone_shepp_window(two_point, scale, 100, 150.0, 1.0)
        assert value == pytest.approx(stats.norm.pdf(0.0) / 5.0)

    def test_window_needs_a_step(self, two_point):
        """Test that n = 0 is rejected."""
        with pytest.raises(ScaleError):
            stable.stone_shepp_window(two_point, stable.scale_for(two_point), 0, 0.0, 1.0)

    @pytest.mark.parametrize("table, n", [({1: 0.5, 2: 0.5}, 100), ({-1: 0.2, 1: 0.5, 2: 0.3}, 400)])
    def test_window_sums_to_one_over_the_lattice(self, table, n):
        """Test that unit windows summed over the lattice x-grid give total mass 1."""
        model = dist.lattice_from_table(table)
        scale = stable.scale_for(model)
        mu, psi = dist.moments(model).mean, stable.psi(scale, n)
        xs = range(int(mu * n - 12 * psi), int(mu * n + 12 * psi) + 1)
        total = sum(stable.stone_shepp_window(model, scale, n, float(x), 1.0) for x in xs)
        assert total == pytest.approx(1.0, abs=1e-3)

    def test_window_matches_exact_point_mass(self, two_point):
        """Test the window term against P(S_400 = 600) within 5% relative."""
        value = stable.stone_shepp_window(two_point, stable.scale_for(two_point), 400, 600.0, 1.0)
        assert value == pytest.approx(exact.law_of_sum(two_point, 400).prob_at(600), rel=0.05)


class TestCalibration:
    """Test suite for matching the exact law of S_n to the limit law."""

    def test_normal_branch_factor_is_near_one(self, two_point):
        """Test that the finite-variance factor stays close to 1."""
        cal = stable.calibrate_scale(two_point, 400)
        assert cal.theoretical_factor == 1.0
        assert cal.factor == pytest.approx(1.0, rel=0.05)
        assert cal.median_stable == pytest.approx(0.0, abs=1e-8)

    def test_non_lattice_rejected(self):
        """Test that calibration needs the exact lattice engine."""
        with pytest.raises(ScaleError):
            stable.calibrate_scale(dist.normal(1.0, 0.5), 10)

"""
Test suite for the cumulant, exponential tilting and the lambda_q solver
"""

import math

import numpy as np
import pytest

from renewal import cramer, dist
from renewal.errors import CramerError


@pytest.fixture
def skip_free():
    """Fixture providing P(xi=1) = 3/4, P(xi=-1) = 1/4."""
    return dist.lattice_from_table({-1: 0.25, 1: 0.75})


class TestCumulant:
    """Test suite for L(lambda) and its minimiser."""

    def test_lambda_min_of_skip_free_walk(self, skip_free):
        """Test lambda_min = -ln(3)/2 and L_min = ln(2 sqrt(3/16))."""
        lam, l_min = cramer.find_lambda_min(skip_free)
        assert lam == pytest.approx(-0.5 * math.log(3.0), abs=1e-12)
        assert l_min == pytest.approx(math.log(2.0 * math.sqrt(0.25 * 0.75)), abs=1e-12)

    def test_lambda_min_of_positive_jumps_is_minus_infinity(self):
        """Test that L decreases forever when xi >= 1."""
        lam, l_min = cramer.find_lambda_min(dist.lattice_from_table({1: 0.5, 2: 0.5}))
        assert lam == -math.inf
        assert l_min == -math.inf

    def test_lambda_min_of_normal(self):
        """Test the closed-form normal minimiser -m / s^2."""
        lam, _ = cramer.find_lambda_min(dist.normal(1.0, 0.5))
        assert lam == pytest.approx(-4.0)

    def test_derivative_is_tilted_mean(self, skip_free):
        """Test that L'(lambda) equals the mean of the tilted law."""
        lam = -0.2
        tilted = cramer.tilt(skip_free, lam)
        assert cramer.cumulant_derivative(skip_free, lam) == pytest.approx(dist.moments(tilted).mean, rel=1e-12)

    def test_lundberg_root(self, skip_free):
        """Test that the negative root of L is ln(1/3)."""
        assert cramer.lundberg_root(skip_free) == pytest.approx(-math.log(3.0), abs=1e-12)

    def test_lundberg_root_absent_for_positive_jumps(self):
        """Test that walks that cannot step down have no Lundberg root."""
        assert cramer.lundberg_root(dist.lattice_from_table({1: 0.5, 2: 0.5})) is None

    def test_lundberg_root_of_normal(self):
        """Test lambda* = -2 m / s^2 for normal jumps."""
        assert cramer.lundberg_root(dist.normal(1.0, 0.5)) == pytest.approx(-8.0)

    def test_cumulant_is_convex(self, skip_free):
        """Test nonnegative second differences of L at -0.5, 0 and 0.5."""
        h = 1e-3
        L = lambda lam: cramer.cumulant(skip_free, lam)
        for lam in (-0.5, 0.0, 0.5):
            assert L(lam + h) - 2 * L(lam) + L(lam - h) >= 0


class TestTilting:
    """Test suite for the tilted law."""

    def test_tilted_lattice_is_normalised(self, skip_free):
        """Test that a tilted table is a probability table."""
        tilted = cramer.tilt(skip_free, 0.4)
        assert tilted.probs.sum() == pytest.approx(1.0, abs=1e-15)
        assert tilted.plus_tail is None

    def test_normal_tilt_shifts_mean(self):
        """Test that tilting N(m, s^2) by lambda gives N(m + s^2 lambda, s^2)."""
        tilted = cramer.tilt(dist.normal(1.0, 0.5), -1.0)
        assert tilted.param("mean") == pytest.approx(0.75)
        assert tilted.param("sd") == pytest.approx(0.5)

    def test_tilt_outside_domain(self):
        """Test that tilting an exponential past its rate is refused."""
        with pytest.raises(CramerError) as info:
            cramer.tilt(dist.shifted_exponential(1.0), 2.0)
        assert info.value.interval == (-math.inf, 1.0)

    def test_zero_tilt_is_identity(self, skip_free):
        """Test that lambda = 0 returns the model itself."""
        assert cramer.tilt(skip_free, 0.0) is skip_free


class TestLambdaQ:
    """Test suite for solving L(lambda_q) = -q."""

    @pytest.mark.parametrize("q", [-0.3, -0.1, 0.05, 0.1])
    def test_root_residual(self, skip_free, q):
        """Test that the solved lambda_q satisfies L(lambda_q) = -q on the increasing branch."""
        ctx = cramer.solve_lambda_q(skip_free, q)
        assert cramer.cumulant(skip_free, ctx.lam_q) == pytest.approx(-q, abs=1e-12)
        assert ctx.lam_q > ctx.lam_min
        assert ctx.mu_q > 0

    @pytest.mark.parametrize("q, lam_q, mu_q", [(0.1, -0.251026, 0.289738), (-0.1, 0.177733, 0.621250)])
    def test_quadratic_closed_form(self, skip_free, q, lam_q, mu_q):
        """Test lambda_q against the root of 3/4 y^2 - exp(-q) y + 1/4 = 0 with y = exp(lambda)."""
        root = math.sqrt(math.exp(-2 * q) - 0.75)
        y = (math.exp(-q) + root) / 1.5
        ctx = cramer.solve_lambda_q(skip_free, q)
        assert ctx.lam_q == pytest.approx(math.log(y), abs=1e-10)
        assert ctx.mu_q == pytest.approx(math.exp(q) * root, abs=1e-10)
        assert ctx.lam_q == pytest.approx(lam_q, abs=2e-6)
        assert ctx.mu_q == pytest.approx(mu_q, abs=2e-6)

    def test_q_zero_keeps_the_walk(self, skip_free):
        """Test that q = 0 gives lambda_q = 0 and mu_q = mu."""
        ctx = cramer.solve_lambda_q(skip_free, 0.0)
        assert ctx.lam_q == 0.0
        assert ctx.mu_q == pytest.approx(0.5)
        assert ctx.tilted is skip_free

    def test_inadmissible_q_reports_interval(self, skip_free):
        """Test that q above -L_min is refused with the admissible interval."""
        with pytest.raises(CramerError, match="outside the admissible interval") as info:
            cramer.solve_lambda_q(skip_free, 0.2)
        lo, hi = info.value.interval
        assert lo == -math.inf
        assert hi == pytest.approx(-math.log(math.sqrt(0.75)))

    def test_normal_closed_form(self):
        """Test the normal lambda_q against m lam + s^2 lam^2 / 2 = -q."""
        ctx = cramer.solve_lambda_q(dist.normal(1.0, 0.5), -0.05)
        lam = ctx.lam_q
        assert lam + 0.5 * (0.5 * lam) ** 2 == pytest.approx(0.05, abs=1e-12)
        assert ctx.mu_q == pytest.approx(1.0 + 0.25 * lam)

    def test_pareto_cannot_be_tilted(self):
        """Test that pareto_shifted has no lambda_q."""
        with pytest.raises(CramerError):
            cramer.solve_lambda_q(dist.pareto_shifted(2.5), -0.1)

    def test_scan_agrees_with_solver(self):
        """Test that a dense scan of L lands within two grid steps of the solver."""
        model = dist.lattice_from_table({-1: 0.2, 1: 0.5, 2: 0.3})
        ctx = cramer.solve_lambda_q(model, -0.05)
        lo, hi, points = ctx.lam_min, ctx.lam_q + 1.0, 20_001
        scanned = cramer.scan_lambda_q(model, -0.05, lo, hi, points)
        assert abs(scanned - ctx.lam_q) <= 2.0 * (hi - lo) / (points - 1)

    def test_context_as_dict(self, skip_free):
        """Test that the context record carries every parameter."""
        record = cramer.solve_lambda_q(skip_free, -0.1).as_dict()
        assert set(record) == {"q", "lambda_minus", "lambda_plus", "lambda_min", "L_min", "lambda_q", "mu_q"}
        assert np.isfinite(record["lambda_q"])

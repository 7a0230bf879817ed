import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from oracles import scalar_normal_logpdf
from vaefqa.numerics import (
    SIGMA_FLOOR,
    GaussianDiag,
    gaussian_log_density,
    kl_to_standard_normal,
    log_mean_exp,
)

# Frozen output of the scalar-density product oracle (oracles.scalar_normal_logpdf).
MIXED_CASE_LOGPDF = -2.3691270664093453

finite = st.floats(-50, 50, allow_nan=False)
positive = st.floats(0.05, 20, allow_nan=False)


def vectors(elements, min_size=1, max_size=6):
    return st.lists(elements, min_size=min_size, max_size=max_size)


class TestGaussianLogDensity:
    def test_unit_gaussian_at_mean(self):
        assert abs(gaussian_log_density([0.0], [0.0], [1.0]) + 0.5 * math.log(2 * math.pi)) < 1e-12

    def test_one_sigma_away(self):
        want = -0.5 * math.log(2 * math.pi) - 0.5
        assert abs(gaussian_log_density([1.0], [0.0], [1.0]) - want) < 1e-12

    def test_mixed_case_matches_scalar_product(self):
        oracle = scalar_normal_logpdf(0.5, 0.0, 0.5) + scalar_normal_logpdf(0.5, 1.0, 2.0)
        assert oracle == pytest.approx(MIXED_CASE_LOGPDF, abs=1e-15)
        got = gaussian_log_density([0.5, 0.5], [0.0, 1.0], [0.5, 2.0])
        assert abs(got - MIXED_CASE_LOGPDF) < 1e-12

    @pytest.mark.parametrize("x, mu, sigma, want", [
        ([0.0], [0.0], [1.0], -0.5 * math.log(2 * math.pi)),
        ([1.0], [0.0], [1.0], -0.5 * math.log(2 * math.pi) - 0.5),
        ([0.5, 0.5], [0.0, 1.0], [0.5, 2.0], MIXED_CASE_LOGPDF),
    ])
    def test_narrow_inputs(self, x, mu, sigma, want):
        f32 = [np.asarray(a, dtype=np.float32) for a in (x, mu, sigma)]
        got = np.float32(gaussian_log_density(*f32))
        assert abs(float(got) - want) <= 1e-5 * max(1.0, abs(want))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            gaussian_log_density([0.0, 1.0], [0.0], [1.0])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            gaussian_log_density([np.nan], [0.0], [1.0])

    def test_sigma_floor(self):
        assert gaussian_log_density([0.0], [0.0], [0.0]) == gaussian_log_density(
            [0.0], [0.0], [SIGMA_FLOOR]
        )

    @settings(max_examples=200, deadline=None)
    @given(vectors(st.tuples(finite, finite, positive)))
    def test_maximised_at_mean(self, cols):
        x, mu, sigma = (np.array(c) for c in zip(*cols))
        assert gaussian_log_density(x, mu, sigma) <= gaussian_log_density(mu, mu, sigma) + 1e-12

    @settings(max_examples=200, deadline=None)
    @given(vectors(st.tuples(finite, finite, positive)), st.floats(-20, 20))
    def test_shift_equivariant(self, cols, c):
        x, mu, sigma = (np.array(c_) for c_ in zip(*cols))
        a = gaussian_log_density(x, mu, sigma)
        b = gaussian_log_density(x + c, mu + c, sigma)
        assert a == pytest.approx(b, rel=1e-9, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(vectors(st.tuples(finite, finite, positive)))
    def test_sum_of_scalar_terms(self, cols):
        x, mu, sigma = (np.array(c) for c in zip(*cols))
        want = sum(
            -0.5 * math.log(2 * math.pi) - math.log(s) - 0.5 * ((a - m) / s) ** 2
            for a, m, s in cols
        )
        assert gaussian_log_density(x, mu, sigma) == pytest.approx(want, rel=1e-12, abs=1e-10)


class TestKl:
    def test_prior(self):
        assert kl_to_standard_normal(GaussianDiag([0.0], [1.0])) == 0.0

    def test_shifted_mean(self):
        assert abs(kl_to_standard_normal(GaussianDiag([1.0], [1.0])) - 0.5) < 1e-12

    def test_wide_sigma_closed_form_and_integral(self):
        got = kl_to_standard_normal(GaussianDiag([0.0], [math.e]))
        closed = 0.5 * (math.e ** 2 - 3)
        assert abs(got - closed) < 1e-12

        def log_q(z):
            return -0.5 * (z / math.e) ** 2 - 1.0 - 0.5 * math.log(2 * math.pi)

        def log_p(z):
            return -0.5 * z * z - 0.5 * math.log(2 * math.pi)

        numeric, err = integrate.quad(
            lambda z: math.exp(log_q(z)) * (log_q(z) - log_p(z)), -80, 80,
            epsabs=1e-13, epsrel=1e-13, limit=200,
        )
        assert abs(numeric - got) < 1e-10

    @pytest.mark.parametrize("mu, sigma, want", [
        ([0.0], [1.0], 0.0),
        ([1.0], [1.0], 0.5),
        ([0.0], [math.e], 0.5 * (math.e ** 2 - 3)),
    ])
    def test_narrow_inputs(self, mu, sigma, want):
        q = GaussianDiag(np.float32(mu), np.float32(sigma))
        assert abs(float(np.float32(kl_to_standard_normal(q))) - want) <= 1e-5 * max(1.0, want)

    def test_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            kl_to_standard_normal(GaussianDiag([0.0], [0.0]))

    @settings(max_examples=200, deadline=None)
    @given(vectors(st.tuples(finite, positive)))
    def test_nonnegative(self, cols):
        mu, sigma = (np.array(c) for c in zip(*cols))
        assert kl_to_standard_normal(GaussianDiag(mu, sigma)) >= 0.0

    def test_from_logvar_clamps(self):
        q = GaussianDiag.from_logvar([0.0, 0.0], [-100.0, 100.0])
        np.testing.assert_allclose(q.sigma, [1e-4, 1e3], rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            GaussianDiag([0.0, 1.0], [1.0])


class TestLogMeanExp:
    @pytest.mark.parametrize("c", [-1e4, -3.5, 0.0, 2.25, 700.0])
    def test_constant(self, c):
        assert log_mean_exp([c, c, c]) == pytest.approx(c, abs=1e-12 * max(1, abs(c)))

    def test_zeros(self):
        assert log_mean_exp([0.0, 0.0]) == 0.0

    def test_underflow_regression(self):
        want = -1000.0 + math.log((1 + math.exp(-2)) / 2)
        assert abs(log_mean_exp([-1000.0, -1002.0]) - want) < 1e-6
        assert abs(log_mean_exp([-1000.0, -1002.0]) - (-1000.5662)) < 1e-4

    def test_empty(self):
        with pytest.raises(ValueError):
            log_mean_exp([])

    def test_non_finite(self):
        with pytest.raises(ValueError):
            log_mean_exp([0.0, -np.inf])

    @settings(max_examples=200, deadline=None)
    @given(vectors(st.floats(-500, 500), max_size=20))
    def test_bounded_by_extremes(self, v):
        got = log_mean_exp(v)
        assert min(v) - 1e-9 <= got <= max(v) + 1e-9

    @settings(max_examples=200, deadline=None)
    @given(vectors(st.floats(-50, 50), max_size=20), st.floats(-1e3, 1e3))
    def test_shift(self, v, c):
        assert log_mean_exp(np.array(v) + c) == pytest.approx(log_mean_exp(v) + c, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(vectors(st.floats(-30, 30), max_size=20))
    def test_matches_naive_in_safe_range(self, v):
        naive = math.log(sum(math.exp(a) for a in v) / len(v))
        assert log_mean_exp(v) == pytest.approx(naive, rel=1e-12, abs=1e-12)

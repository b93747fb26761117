import math

import numpy as np
import pytest
from scipy import integrate

from smoothmle.distributions import Distribution, make_fixture
from smoothmle.errors import InvalidRadius, OffsetTooLarge
from smoothmle.smoothing import SmoothedModel, smooth


def laplace_conv(x, r, b=1.0):
    """Brute-force ``(Laplace(b) * N(0, r^2))(x)``."""
    f = lambda y: math.exp(-abs(y) / b) / (2 * b) * math.exp(-0.5 * ((x - y) / r) ** 2) \
        / (r * math.sqrt(2 * math.pi))
    lo, hi = x - 40 * r, x + 40 * r
    pts = [0.0] if lo < 0 < hi else None
    return integrate.quad(f, lo, hi, points=pts, epsabs=0, epsrel=1e-13, limit=200)[0]


class TestSmooth:
    def test_gaussian_convolution_identity(self):
        m = smooth(Distribution.gaussian(), 1.0)
        x = np.linspace(-5, 5, 11)
        target = np.exp(-x * x / 4) / math.sqrt(4 * math.pi)
        assert np.allclose(m.eval_pdf(x), target, rtol=1e-13, atol=0)
        assert m.closed_form

    def test_smoothed_dirac(self):
        m = smooth(Distribution.dirac(0.0), 0.5)
        x = np.linspace(-2, 2, 9)
        target = np.exp(-x * x / 0.5) / math.sqrt(0.5 * math.pi)
        assert np.allclose(m.eval_pdf(x), target, rtol=1e-13, atol=0)

    @pytest.mark.parametrize("r", [0.0, -1.0, math.nan])
    def test_bad_radius(self, r):
        with pytest.raises(InvalidRadius):
            SmoothedModel(Distribution.gaussian(), r)

    def test_laplace_against_brute_force(self):
        m = smooth(Distribution.laplace(1.0), 0.1)
        for x in (0.0, 1.0, 4.0):
            assert m.eval_pdf(x) == pytest.approx(laplace_conv(x, 0.1), abs=1e-6)
        assert m.expect(lambda x: np.ones_like(x)) == pytest.approx(1.0, abs=1e-6)


class TestPointwise:
    def test_pdf_values(self):
        assert smooth(Distribution.gaussian(), 1.0).eval_pdf(0.0) == pytest.approx(0.282095, abs=1e-6)
        assert smooth(Distribution.dirac(0.0), 1.0).eval_pdf(1.0) == pytest.approx(0.241971, abs=1e-6)

    def test_score_values(self):
        assert smooth(Distribution.gaussian(), 1.0).eval_score(2.0) == pytest.approx(-1.0, abs=1e-14)
        assert smooth(Distribution.dirac(0.0), 0.5).eval_score(0.25) == pytest.approx(-1.0, abs=1e-14)

    @pytest.mark.parametrize("name", ["gaussian", "laplace", "dirac_mixture"])
    def test_score_zero_at_symmetry_center(self, name):
        assert abs(smooth(make_fixture(name), 0.3).eval_score(0.0)) < 1e-12

    def test_score_derivative(self):
        x = np.linspace(-3, 3, 7)
        assert np.allclose(smooth(Distribution.gaussian(), 1.0).eval_score_deriv(x), -0.5)
        assert np.allclose(smooth(Distribution.dirac(0.0), 0.5).eval_score_deriv(x), -4.0)

    def test_spiked_laplace_derivative_floor(self):
        r = 0.05
        m = smooth(make_fixture("spiked_laplace"), r)
        x = np.linspace(-6, 6, 1000)
        assert m.eval_score_deriv(x).min() >= -(1 + 1e-4) / r ** 2

    @pytest.mark.parametrize("name,r", [("laplace", 0.1), ("spiked_laplace", 0.05),
                                        ("sawtooth_gaussian", 0.02), ("sawtooth_gaussian", 0.1), ("dirac_mixture", 0.3)])
    def test_posterior_identity(self, name, r):
        # the score equals -E[Z | X = x] / r^2 with Z = x - Y
        m = smooth(make_fixture(name), r)
        for x in (-0.7, 0.0, 0.33, 3.99):
            s = m.eval_score(x)
            assert m.posterior_score(x) == pytest.approx(s, rel=1e-6, abs=1e-6)


class TestFisher:
    def test_gaussian(self):
        assert smooth(Distribution.gaussian(), 1.0).fisher_info() == pytest.approx(0.5, abs=1e-10)

    def test_dirac_tight(self):
        assert smooth(Distribution.dirac(0.0), 0.5).fisher_info() == pytest.approx(4.0, abs=1e-9)

    def test_laplace_fine_grid_oracle(self):
        r = 0.1
        m = smooth(Distribution.laplace(1.0), r)
        x = np.linspace(-40, 40, 320_001)
        p = np.array([laplace_conv(v, r) for v in x[::400]])
        # coarse brute-force check of the density, then a fine Riemann sum of s^2 f
        assert np.allclose(m.eval_pdf(x[::400]), p, atol=1e-9)
        ell, s = m.logpdf_score(x)
        oracle = np.trapezoid(np.exp(ell) * s * s, x)
        I = m.fisher_info()
        assert I == pytest.approx(oracle, abs=1e-4)
        iqr = 2 * math.log(2)
        assert 0.01 / (iqr + r) ** 2 < I <= 1 / r ** 2

    def test_cached(self):
        m = smooth(make_fixture("laplace"), 0.2)
        assert m.fisher_info() is m.fisher_info()


class TestScoreMoments:
    @pytest.mark.parametrize("name", ["gaussian", "laplace", "spiked_laplace",
                                      "sawtooth_gaussian", "dirac_mixture"])
    def test_first_and_second(self, name):
        m = smooth(make_fixture(name), 0.1)
        assert abs(m.score_moment(0.0, 1)) < 1e-8
        assert m.score_moment(0.0, 2) == pytest.approx(m.fisher_info(), abs=1e-8)

    def test_gaussian_third_absolute(self):
        m = smooth(Distribution.gaussian(), 1.0)
        # score = -x/2 with x ~ N(0, 2): E|s|^3 = 2 sqrt(2/pi) (1/sqrt 2)^3
        assert m.score_moment(0.0, 3, absolute=True) == pytest.approx(0.564, abs=1e-3)

    def test_offset_too_large(self):
        m = smooth(Distribution.gaussian(), 1.0)
        with pytest.raises(OffsetTooLarge):
            m.score_moment(0.51, 2)
        m.score_moment(0.5, 2)

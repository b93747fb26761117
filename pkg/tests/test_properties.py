"""Randomized properties over model parameters and sample draws."""

import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from smoothmle import estimators as est
from smoothmle import lowerbound as lb
from smoothmle.distributions import Distribution, make_fixture
from smoothmle.rng import derive_seed, stream
from smoothmle.smoothing import smooth

SETTINGS = settings(max_examples=25, deadline=None,
                    suppress_health_check=[HealthCheck.too_slow])

radii = st.floats(0.02, 2.0)
scales = st.floats(0.2, 5.0)


@st.composite
def mixtures(draw):
    k = draw(st.integers(1, 3))
    raw = draw(st.lists(st.floats(0.1, 1.0), min_size=k, max_size=k))
    w = np.array(raw) / sum(raw)
    w[-1] = 1.0 - w[:-1].sum()
    mus = draw(st.lists(st.floats(-3, 3), min_size=k, max_size=k))
    sig = draw(st.lists(st.sampled_from([0.0, 0.1, 0.5, 1.0]), min_size=k, max_size=k))
    return Distribution.mixture(list(zip(w, mus, sig)))


@SETTINGS
@given(mixtures(), radii)
def test_fisher_bounded_by_inverse_r2(d, r):
    m = smooth(d, r)
    assert 0 < m.fisher_info() <= (1 + 1e-9) / r ** 2


@SETTINGS
@given(mixtures(), radii, st.floats(-5, 5))
def test_score_derivative_floor(d, r, x):
    assert smooth(d, r).eval_score_deriv(x) >= -(1 + 1e-9) / r ** 2


@SETTINGS
@given(scales, radii, st.floats(-4, 4))
def test_laplace_score_matches_log_derivative(b, r, x):
    m = smooth(Distribution.laplace(b), r)
    h = 1e-5 * r
    fd = (m.logpdf(x + h) - m.logpdf(x - h)) / (2 * h)
    s = m.eval_score(x)
    assert abs(fd - s) <= 1e-5 * max(1.0, abs(s)) / r


@SETTINGS
@given(st.floats(0.01, 0.99))
def test_quantile_is_generalized_inverse(p):
    for d in (make_fixture("laplace"), make_fixture("spiked_laplace"),
              make_fixture("dirac_mixture")):
        q = d.quantile(p)
        assert d.cdf(q) >= p - 1e-12
        assert d.cdf(q - 1e-7 * (1 + abs(q))) < p + 1e-12


@SETTINGS
@given(st.floats(-50, 50), st.integers(0, 2 ** 32))
def test_local_mle_shift_equivariance(c, seed):
    f = make_fixture("laplace")
    x = f.sample(60, stream(seed, "x"))
    a = est.local_mle(f, 0.3, x, (-3, 3), stream(seed, "z"))
    b = est.local_mle(f, 0.3, x + c, (c - 3, c + 3), stream(seed, "z"))
    assert abs((b.lambda_hat - c) - a.lambda_hat) <= 1e-9 + 1e-13 * abs(c)


@SETTINGS
@given(st.integers(10, 10 ** 6), st.floats(1e-6, 0.5), st.floats(1e-3, 1e3))
def test_error_bound_scaling(n, delta, fisher):
    lead, _ = est.error_bound(n, delta, fisher)
    assert math.isclose(lead, est.error_bound(4 * n, delta, fisher)[0] * 2, rel_tol=1e-12)
    assert math.isclose(lead, lb.indistinguishable_shift(n, delta, fisher), rel_tol=1e-12)


@SETTINGS
@given(st.floats(0.05, 3.0), st.floats(0.001, 0.25))
def test_gaussian_divergences_closed_form(sigma, frac):
    m = smooth(Distribution.dirac(0.0), sigma)
    shift = 2 * frac * sigma
    assert math.isclose(lb.kl_divergence(m, shift), shift ** 2 / (2 * sigma ** 2),
                        rel_tol=1e-7)
    h2 = 1 - math.exp(-shift ** 2 / (8 * sigma ** 2))
    assert math.isclose(lb.hellinger_sq(m, shift), h2, rel_tol=1e-7)


@SETTINGS
@given(st.integers(0, 2 ** 63), st.text(max_size=8), st.lists(st.integers(0, 10 ** 6),
                                                              max_size=3))
def test_seed_derivation_is_stable(seed, label, idx):
    a = derive_seed(seed, label, *idx)
    assert a == derive_seed(seed, label, *idx)
    assert 0 <= a < 2 ** 64

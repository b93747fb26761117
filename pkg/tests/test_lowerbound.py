import math

import numpy as np
import pytest

from smoothmle import lowerbound as lb
from smoothmle.distributions import Distribution, make_fixture
from smoothmle.errors import ShiftZero, ValidationError
from smoothmle.rng import stream
from smoothmle.smoothing import smooth

# a pure Gaussian N(0, 1) written as a smoothed atom: f_r = N(0, r^2) with r = 1
UNIT = smooth(Distribution.dirac(0.0), 1.0)


class TestDivergences:
    def test_gaussian_kl(self):
        assert lb.kl_divergence(UNIT, 0.2) == pytest.approx(0.02, rel=1e-8)
        assert lb.kl_divergence(UNIT, 0.2, reverse=True) == pytest.approx(0.02, rel=1e-8)

    def test_zero_shift(self):
        assert lb.kl_divergence(UNIT, 0.0) == 0.0
        assert lb.hellinger_sq(UNIT, 0.0) == 0.0
        assert lb.loglik_moment(UNIT, 0.0, 3) == 0.0

    def test_laplace_kl_leading_term(self):
        m = smooth(make_fixture("laplace"), 0.2)
        eps = 0.01
        assert lb.kl_divergence(m, 2 * eps) == pytest.approx(2 * eps ** 2 * m.fisher_info(),
                                                               rel=0.1)

    def test_gaussian_hellinger(self):
        assert lb.hellinger_sq(UNIT, 0.2) == pytest.approx(1 - math.exp(-0.04 / 8), rel=1e-8)

    @pytest.mark.parametrize("name", ["gaussian", "laplace", "dirac_mixture",
                                      "spiked_laplace", "spiked_gaussian",
                                      "sawtooth_gaussian"])
    def test_hellinger_vs_kl(self, name):
        r = 0.2
        m = smooth(make_fixture(name), r)
        for shift in (r / 16, r / 4):
            h2 = lb.hellinger_sq(m, shift)
            assert 0.0 <= h2 <= 1.0
            assert h2 <= 0.26 * lb.kl_divergence(m, shift) + 1e-6

    def test_gaussian_gamma_second_moment(self):
        # gamma ~ N(-0.02, 0.04) under p, so E gamma^2 = 0.0404
        assert lb.loglik_moment(UNIT, 0.2, 2) == pytest.approx(0.0404, rel=1e-8)

    def test_laplace_gamma_third_moment(self):
        m = smooth(make_fixture("laplace"), 0.2)
        eps, r = 0.01, 0.2
        rhs = 3.0 * (30 * eps / r) * 4 * eps ** 2 * m.fisher_info() * 1.5
        assert lb.loglik_moment(m, 2 * eps, 3) <= rhs

    def test_moment_order(self):
        with pytest.raises(ValidationError):
            lb.loglik_moment(UNIT, 0.1, 1)


class TestConditions:
    def test_gaussian_all_pass(self):
        rep = lb.check_newlb_conditions(smooth(Distribution.dirac(0.0), 1.0), 0.01, 0.05)
        assert rep.all_passed
        assert len(rep.conditions) == 6
        assert rep.kl_pq == pytest.approx(rep.kl_qp, rel=1e-12)
        assert rep.kappa_needed <= 0.05

    def test_zero_eps(self):
        with pytest.raises(ShiftZero):
            lb.check_newlb_conditions(UNIT, 0.0, 0.1)

    def test_eps_too_large(self):
        with pytest.raises(ValidationError):
            lb.check_newlb_conditions(UNIT, 0.3, 0.1)

    def test_spiked_laplace_ratios(self):
        r = 0.2
        rep = lb.check_newlb_conditions(smooth(make_fixture("spiked_laplace"), r), r / 16, 0.2)
        first, second = rep.conditions[0], rep.conditions[1]
        assert first.passed and second.passed
        assert first.ratio == pytest.approx(rep.hellinger_sq / (rep.kl_pq / 4))

    def test_delta_floor_formula(self):
        rep = lb.check_newlb_conditions(UNIT, 0.05, 0.1, n=100, C=2.0)
        kl = rep.kl_pq
        alpha = max(0.1, 1 / math.sqrt(100 * kl), kl)
        assert rep.delta_floor == pytest.approx(2 * math.exp(-(1 + 2 * alpha) * 100 * kl / 4))

    def test_report_json(self):
        rep = lb.check_newlb_conditions(UNIT, 0.05, 0.1)
        doc = rep.to_json()
        assert doc["conditions"][0]["index"] == 1 and "p2" in doc["gamma_moments"]


class TestTV:
    def test_gaussian_example(self):
        est, se = lb.tv_product_mc(UNIT, 0.2, 100, 4000, stream(1, "tv"))
        assert abs(est - 0.3173) <= 3 * se

    def test_zero_shift(self):
        assert lb.tv_product_mc(UNIT, 0.0, 10, 1000, stream(1, "tv")) == (1.0, 0.0)

    def test_large_shift(self):
        est, _ = lb.tv_product_mc(UNIT, 10.0, 1, 2000, stream(1, "tv"))
        assert est < 0.01

    def test_trials_floor(self):
        with pytest.raises(ValidationError):
            lb.tv_product_mc(UNIT, 0.1, 10, 999, stream(1, "tv"))

    def test_workers_do_not_change_result(self):
        m = smooth(make_fixture("laplace"), 0.3)
        a = lb.tv_product_mc(m, 0.1, 20, 1500, 9, workers=1)
        b = lb.tv_product_mc(m, 0.1, 20, 1500, 9, workers=2)
        assert a == b

    def test_closed_form(self):
        assert lb.gaussian_tv_complement(0.2, 100, 1.0) == pytest.approx(0.31731, abs=1e-5)


class TestShift:
    def test_plug_in(self):
        assert lb.indistinguishable_shift(10 ** 4, math.exp(-8), 1.0) == pytest.approx(0.04)

    def test_fisher_scaling(self):
        a = lb.indistinguishable_shift(500, 0.05, 1.0)
        assert lb.indistinguishable_shift(500, 0.05, 4.0) == pytest.approx(a / 2)

    def test_gaussian_mc_at_leading_shift(self):
        n, delta = 400, math.exp(-3)
        eps = 0.9 * lb.indistinguishable_shift(n, delta, 1.0)
        est, se = lb.tv_product_mc(UNIT, 2 * eps, n, 4000, 3)
        assert abs(est - lb.gaussian_tv_complement(2 * eps, n, 1.0)) <= 4 * se

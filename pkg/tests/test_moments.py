import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssgauss.covariance import ProcessSpec
from ssgauss.functionals import FunctionalSpec, simulate_functional
from ssgauss.moments import (MomentReport, QuadratureError, delta_moment_lower_bound,
                             dirichlet_simplex, dirichlet_simplex_quad, exact_delta_moment,
                             exact_riesz_moment, exp_time_moment, gamma_moment_of_exp, mc_moment,
                             mollified_mean, shift_inequality_check, subadditivity_check, write_reports)

BM = ProcessSpec("bm")
RL = ProcessSpec("rl", alpha=0.25)
FBM = ProcessSpec("fbm", H=0.3)

# frozen quadrature values (two independent routes agree, see below)
FROZEN = {
    ("rl", 1): 0.376126, ("rl", 2): 0.175470, ("rl", 3): 0.092299,
    ("fbm", 1): 0.569918, ("fbm", 2): 0.441522, ("fbm", 3): 0.399183,
}


class TestExactDelta:
    def test_bm_m1(self):
        assert exact_delta_moment(BM, 1) == pytest.approx(math.sqrt(2 / math.pi), abs=1e-6)

    def test_bm_m2(self):
        assert exact_delta_moment(BM, 2) == pytest.approx(1.0, abs=1e-5)

    def test_bm_m3_dirichlet(self):
        target = 6 * (2 * math.pi) ** -1.5 * dirichlet_simplex(3, 0.5)
        assert exact_delta_moment(BM, 3) == pytest.approx(target, rel=1e-6)

    @pytest.mark.parametrize("key", sorted(FROZEN))
    def test_frozen(self, key):
        spec = RL if key[0] == "rl" else FBM
        assert exact_delta_moment(spec, key[1]) == pytest.approx(FROZEN[key], abs=2e-6)

    def test_rl_m1_closed_form(self):
        # E L_1 = int (2 pi s^(2a)/(2a))^(-1/2) ds
        a = 0.25
        target = (2 * math.pi / (2 * a)) ** -0.5 / (1 - a)
        assert exact_delta_moment(RL, 1) == pytest.approx(target, rel=1e-8)

    def test_rl_above_lower_bound(self):
        assert exact_delta_moment(RL, 2) > delta_moment_lower_bound(RL, 2)

    def test_subfbm_below_fbm(self):
        sub = ProcessSpec("subfbm", H=0.3)
        for m in (1, 2, 3):
            assert exact_delta_moment(sub, m) <= exact_delta_moment(FBM, m)

    def test_error_returned(self):
        val, err = exact_delta_moment(BM, 2, return_error=True)
        assert 0 <= err < 1e-6 * val

    def test_not_converged(self):
        with pytest.raises(QuadratureError, match="worst region"):
            exact_delta_moment(ProcessSpec("bifbm", H=0.6, K=0.5), 3, n=2, rtol=1e-14)

    def test_rejects_large_m(self):
        with pytest.raises(ValueError):
            exact_delta_moment(BM, 4)

    def test_rejects_nonintegrable(self):
        with pytest.raises(ValueError):
            exact_delta_moment(ProcessSpec("bm", d=2), 1)

    def test_mc_agrees_bm(self):
        fs = simulate_functional(BM, FunctionalSpec("delta"), 4096, 1.0, 20_000, 17)
        for m in (1, 2):
            ex, ex_err = exact_delta_moment(BM, m, return_error=True)
            mv, se = mc_moment(fs.values, m)
            assert MomentReport(m, exact=ex, exact_error=ex_err, mc=mv, mc_se=se).agree

    def test_rl_levels_match_mollified_mean(self):
        fs = simulate_functional(RL, FunctionalSpec("delta"), 2048, 1.0, 20_000, 18)
        for k, e in enumerate(fs.eps):
            mv, se = mc_moment(fs.levels[:, k], 1)
            assert abs(mv - mollified_mean(RL, e)) <= 3 * se


class TestMollifiedMean:
    def test_tends_to_first_moment(self):
        assert mollified_mean(RL, 1e-10) == pytest.approx(exact_delta_moment(RL, 1), rel=1e-4)

    def test_flat_limit(self):
        assert mollified_mean(BM, 1e8) == pytest.approx((2 * math.pi * 1e8) ** -0.5, rel=1e-7)

    def test_monotone(self):
        vals = [mollified_mean(FBM, e) for e in (1.0, 0.1, 0.01)]
        assert vals[0] < vals[1] < vals[2] < exact_delta_moment(FBM, 1)


class TestRiesz:
    def test_bm_half(self):
        target = (4 / 3) * 2**-0.25 * math.gamma(0.25) / math.sqrt(math.pi)
        assert exact_riesz_moment(BM, 0.5) == pytest.approx(target, rel=1e-12)

    def test_domain(self):
        with pytest.raises(ValueError):
            exact_riesz_moment(BM, 1.0)


class TestDirichlet:
    @pytest.mark.parametrize("m", [1, 2, 3])
    @pytest.mark.parametrize("theta", [0.25, 0.5])
    def test_routes_agree(self, m, theta):
        assert dirichlet_simplex_quad(m, theta) == pytest.approx(dirichlet_simplex(m, theta), abs=1e-6)

    def test_theta_zero_is_simplex_volume(self):
        for m in (1, 2, 3, 5):
            assert dirichlet_simplex(m, 0.0) == pytest.approx(1 / math.factorial(m), rel=1e-13)

    @given(st.integers(1, 30), st.floats(0.01, 0.95))
    @settings(max_examples=50, deadline=None)
    def test_recursion(self, m, theta):
        # adding one point multiplies by Gamma(1-theta) Beta-type ratio
        r = dirichlet_simplex(m + 1, theta) / dirichlet_simplex(m, theta)
        g = math.gamma(1 - theta) * math.exp(math.lgamma(1 + (1 - theta) * m)
                                             - math.lgamma(1 + (1 - theta) * (m + 1)))
        assert r == pytest.approx(g, rel=1e-10)

    def test_domain(self):
        with pytest.raises(ValueError):
            dirichlet_simplex(2, 1.0)
        with pytest.raises(ValueError):
            dirichlet_simplex_quad(4, 0.5)


class TestExpTime:
    def test_zero(self):
        assert exp_time_moment(BM, 0) == 1.0

    def test_bm_closed_forms(self):
        assert exp_time_moment(BM, 1) == pytest.approx(1 / math.sqrt(2), rel=1e-9)
        assert exp_time_moment(BM, 2) == pytest.approx(0.5, rel=1e-8)

    def test_m1_matches_simplex_route(self):
        # E int_0^tau = Gamma(1 + (1 - ad)) E int_0^1 by self-similarity
        for spec in (RL, FBM):
            ad = spec.self_similarity
            assert exp_time_moment(spec, 1) == pytest.approx(
                gamma_moment_of_exp(1 - ad) * exact_delta_moment(spec, 1), rel=1e-7)

    def test_bm_slack_zero(self):
        assert subadditivity_check(BM)[0] == pytest.approx(0.0, abs=1e-8)

    @pytest.mark.slow
    def test_rl_subadditive(self):
        assert subadditivity_check(RL)[0] >= -1e-4

    def test_order_cap(self):
        with pytest.raises(ValueError):
            exp_time_moment(BM, 3)
        with pytest.raises(ValueError):
            subadditivity_check(BM, [(1, 2)])

    def test_gamma_moment(self):
        assert gamma_moment_of_exp(2.0) == pytest.approx(2.0)
        with pytest.raises(ValueError):
            gamma_moment_of_exp(0.0)


class TestShift:
    def test_zero_shift_zero_margin(self):
        holds, margin = shift_inequality_check(BM, [0.5, 1.0], np.zeros(2), 0.1)
        assert holds and margin == 0.0

    @given(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=2, unique=True),
           st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.floats(0.01, 0.5))
    @settings(max_examples=100, deadline=None)
    def test_margin_nonnegative(self, times, shift, eps):
        times = sorted(times)
        holds, _ = shift_inequality_check(FBM, times, shift[:len(times)], eps)
        assert holds

    def test_single_time_closed_form(self):
        s, a, e = 0.7, 0.9, 0.2
        _, margin = shift_inequality_check(BM, [s], [a], e)
        v = s + e
        assert margin == pytest.approx((2 * math.pi * v) ** -0.5 * (1 - math.exp(-a * a / (2 * v))), rel=1e-12)

    def test_eps_positive(self):
        with pytest.raises(ValueError):
            shift_inequality_check(BM, [1.0], [0.0], 0.0)


def test_mc_moment_and_report(tmp_path):
    mv, se = mc_moment(np.array([1.0, 2.0, 3.0]), 2)
    assert mv == pytest.approx(14 / 3)
    r = MomentReport(2, exact=1.0, exact_error=0.0, mc=1.0 + 2 * se, mc_se=se, process=BM.to_dict())
    assert r.agree
    assert MomentReport(1).agree is None
    write_reports([r], tmp_path / "m.json")
    data = json.loads((tmp_path / "m.json").read_text())
    assert data["bm/delta/m=2/raw"]["agree"] is True

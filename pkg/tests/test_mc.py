import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssgauss.covariance import ProcessSpec
from ssgauss.mc import (TailFitError, ci_overlap, constant_consistency, ks_two_sample,
                        lower_bound_exp_check, moment_limit_a, small_ball_fit, survival_curve,
                        tail_fit, write_json, write_survival_csv)


def weibull_tail(C, p, N, seed):
    """Samples with P(X > x) = exp(-C x^p) exactly."""
    E = np.random.default_rng(seed).exponential(size=N)
    return (E / C) ** (1 / p)


@pytest.fixture(scope="module")
def abs_normal():
    return np.abs(np.random.default_rng(42).standard_normal(100_000))


class TestSurvival:
    def test_values(self):
        x, ls = survival_curve([3.0, 1.0, 2.0, 4.0])
        assert np.array_equal(x, [1, 2, 3, 4])
        assert np.allclose(np.exp(ls), [1, 0.75, 0.5, 0.25])

    @given(st.lists(st.floats(0, 1e6), min_size=2, max_size=200))
    @settings(max_examples=50, deadline=None)
    def test_monotone(self, xs):
        _, ls = survival_curve(xs)
        assert np.all(np.diff(ls) < 0) and ls[0] == 0.0


class TestTailFit:
    @pytest.mark.parametrize("C,p", [(0.7, 3.0), (1.3, 2.5)])
    def test_synthetic_weibull(self, C, p):
        tf = tail_fit(weibull_tail(C, p, 100_000, 1), p, prefactor=False, n_boot=100)
        assert abs(tf.exponent - p) < 0.15
        assert tf.ci[0] <= C <= tf.ci[1]
        assert tf.exponent_ci[0] < tf.exponent < tf.exponent_ci[1]

    def test_gaussian_fixed_constant(self, abs_normal):
        tf = tail_fit(abs_normal, 2.0, n_boot=100)
        assert tf.mode == "fixed" and tf.ci[0] <= 0.5 <= tf.ci[1]
        assert tf.prefactor_power is not None
        assert set(tf.sensitivity) == {"0.8-0.99", "0.9-0.999", "0.95-0.999"}

    def test_free_mode(self, abs_normal):
        tf = tail_fit(abs_normal, n_boot=0, sensitivity=False)
        assert tf.mode == "free" and tf.ci is None
        assert tf.constant == tf.constant_free

    def test_deterministic(self, abs_normal):
        a = tail_fit(abs_normal, 2.0, n_boot=30, seed=5)
        b = tail_fit(abs_normal, 2.0, n_boot=30, seed=5)
        assert a.to_dict() == b.to_dict()

    def test_insufficient_tail(self):
        with pytest.raises(TailFitError, match="insufficient tail"):
            tail_fit(np.arange(1.0, 200.0), 2.0)

    def test_nonfinite(self):
        with pytest.raises(TailFitError):
            tail_fit(np.array([1.0, np.inf] * 1000), 2.0)

    def test_mode_errors(self, abs_normal):
        with pytest.raises(ValueError):
            tail_fit(abs_normal, mode="fixed")
        with pytest.raises(ValueError):
            tail_fit(abs_normal, 2.0, mode="mle")


class TestMomentLimit:
    def test_gaussian(self, abs_normal):
        ml = moment_limit_a(abs_normal, 0.5)
        assert ml.tail_constant == pytest.approx(0.5, rel=0.2)
        assert ml.tail_constant_ci[0] < ml.tail_constant < ml.tail_constant_ci[1]
        assert ml.orders == list(range(1, 11)) and ml.m_max == 10

    def test_weibull_three(self):
        # P(X > x) = exp(-x^3) has ab = 1/3
        ml = moment_limit_a(weibull_tail(1.0, 3.0, 100_000, 3), 1 / 3)
        assert ml.tail_constant == pytest.approx(1.0, rel=0.2)

    def test_truncates_heavy_tail(self, caplog):
        # lognormal moments: relative SE exceeds 0.5 around m = 7 at this N
        x = np.random.default_rng(0).lognormal(0, 0.7, 20_000)
        with caplog.at_level(logging.WARNING):
            ml = moment_limit_a(x, 0.5, m_max=10)
        assert "truncating" in caplog.text
        assert 4 <= ml.m_max < 10 and ml.warnings

    def test_errors(self, abs_normal):
        with pytest.raises(ValueError):
            moment_limit_a(abs_normal, 0.5, m_max=13)
        with pytest.raises(ValueError):
            moment_limit_a(-abs_normal, 0.5)
        with pytest.raises(ValueError):
            moment_limit_a(abs_normal, 1.0)


class TestSmallBall:
    def test_synthetic_exact(self):
        c = 1.2
        sups = np.sqrt(c / np.random.default_rng(7).exponential(size=200_000))
        sb = small_ball_fit(ProcessSpec("bm"), np.linspace(0.5, 1.0, 11), 0, 0, sups=sups)
        assert sb.fixed_exponent == 2.0
        assert sb.constant == pytest.approx(c, rel=0.05)
        assert sb.exponent == pytest.approx(2.0, abs=0.2)

    def test_drops_sparse_levels(self, caplog):
        sups = np.sqrt(1.0 / np.random.default_rng(8).exponential(size=20_000))
        with caplog.at_level(logging.WARNING):
            sb = small_ball_fit(ProcessSpec("bm"), [0.2, 0.5, 0.6, 0.7, 0.8], 0, 0, sups=sups)
        assert sb.dropped == [0.2] and "fewer than 10 hits" in caplog.text

    def test_bm_paths(self):
        sb = small_ball_fit(ProcessSpec("bm"), np.linspace(0.5, 1.0, 11), 50_000, 3, n=256)
        assert sb.constant == pytest.approx(math.pi**2 / 8, rel=0.25)

    def test_bad_grid(self):
        with pytest.raises(ValueError):
            small_ball_fit(ProcessSpec("bm"), [0.0, 0.5], 10, 0, sups=np.ones(10))


class TestLowerBound:
    @pytest.mark.parametrize("d", [1, 2])
    def test_linear_and_positive(self, d):
        alpha, beta, c0 = 0.3, 0.8, 1.5
        rows = lower_bound_exp_check(alpha, beta, [1, 10, 100, 1000], c0, d)
        ab = alpha * beta
        cd = d ** (-beta / 2)
        B = c0 * d
        slope = (cd / 2) * (2 * B / cd) ** (-ab / (1 - ab))
        for r in rows:
            assert r["margin"] == pytest.approx(slope, rel=1e-10) and r["margin"] > 0

    def test_domain(self):
        with pytest.raises(ValueError):
            lower_bound_exp_check(0.5, 2.0, [1.0], 1.0)


class TestKS:
    def test_same_law(self):
        rng = np.random.default_rng(1)
        _, p = ks_two_sample(rng.normal(size=5000), rng.normal(size=5000))
        assert p > 0.001

    def test_different(self):
        rng = np.random.default_rng(2)
        _, p = ks_two_sample(rng.normal(size=5000), rng.normal(0.2, 1, size=5000))
        assert p < 1e-6

    def test_too_small(self):
        with pytest.raises(ValueError):
            ks_two_sample(np.ones(50), np.ones(500))


def test_ci_overlap():
    assert ci_overlap((0, 1), (1, 2)) and not ci_overlap((0, 1), (1.1, 2))


def test_consistency_structure():
    rep = constant_consistency(0.3, 5000, 1, n=256, n_boot=20)
    assert rep.multiplier == pytest.approx(0.7303, abs=1e-4)
    assert len(rep.chd_bounds) == 2 and rep.fbm_in_bounds in (True, False)
    assert rep.fbm["N"] == 5000 and rep.rl_corrected["fixed_exponent"] == pytest.approx(1 / 0.3)


def test_writers(tmp_path):
    write_json({"a": 1}, tmp_path / "a.json")
    assert json.loads((tmp_path / "a.json").read_text()) == {"a": 1}
    write_survival_csv([2.0, 1.0], tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines() == ["x,log_survival", "1.0,0.0",
                                                             f"2.0,{math.log(0.5)!r}"]


def test_moment_limit_clips_small_negatives(abs_normal, caplog):
    x = abs_normal.copy()
    x[:50] = -0.01
    with caplog.at_level(logging.WARNING):
        ml = moment_limit_a(x, 0.5)
    assert "clipped 50" in caplog.text and ml.warnings
    assert ml.tail_constant == pytest.approx(moment_limit_a(np.maximum(x, 0), 0.5).tail_constant)

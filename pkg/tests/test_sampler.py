import logging
import math

import numpy as np
import pytest
from scipy import stats

from ssgauss import sampler
from ssgauss.covariance import ProcessSpec, cov_fbm, cov_rl, cov_subfbm
from ssgauss.sampler import (PathBatch, PathStream, SamplingError, cholesky_factor, derive_seed,
                             fgn_eigenvalues, rl_weights, sample, sample_cholesky,
                             sample_fbm_circulant, sample_rl_kernel, sample_subfbm_decomposed,
                             uniform_grid)


def emp_cov(x, y):
    """Sample covariance of zero-mean draws and its standard error."""
    p = x * y
    return p.mean(), p.std(ddof=1) / math.sqrt(p.size)


class TestCholesky:
    def test_bm_variance(self):
        b = sample_cholesky(ProcessSpec("bm"), [0.5, 1.0], 100_000, 1)
        assert b.paths[:, 1, 0].var() == pytest.approx(1.0, abs=0.02)

    def test_fbm_covariance(self):
        grid = np.linspace(0.125, 1, 8)
        b = sample_cholesky(ProcessSpec("fbm", H=0.3), grid, 20_000, 2)
        for i, j in [(0, 7), (3, 5), (7, 7), (1, 2)]:
            m, se = emp_cov(b.paths[:, i, 0], b.paths[:, j, 0])
            assert abs(m - cov_fbm(grid[i], grid[j], 0.3)) < 4 * se

    def test_components_independent(self):
        b = sample_cholesky(ProcessSpec("fbm", H=0.3, d=2), np.linspace(0.25, 1, 4), 20_000, 3)
        m, se = emp_cov(b.paths[:, -1, 0], b.paths[:, -1, 1])
        assert abs(m) < 4 * se

    def test_jitter_reported(self, caplog):
        # two nearly coincident times make the matrix numerically singular
        spec = ProcessSpec("fbm", H=0.95)
        grid = np.linspace(0.5, 1.0, 400)
        with caplog.at_level(logging.WARNING):
            L, jitter = cholesky_factor(spec, grid)
        if jitter:
            assert "jitter" in caplog.text
        assert np.all(np.isfinite(L))

    def test_failure_message(self, monkeypatch):
        def boom(*a, **k):
            raise np.linalg.LinAlgError("not pd")
        monkeypatch.setattr(np.linalg, "cholesky", boom)
        with pytest.raises(SamplingError, match="coarsen the grid"):
            cholesky_factor(ProcessSpec("bm"), [0.5, 1.0])


class TestCirculant:
    def test_bm_eigenvalues_flat(self):
        lam, clipped = fgn_eigenvalues(0.5, 64)
        assert np.allclose(lam, 1.0) and clipped == 0

    def test_h07_covariance(self):
        b = sample_fbm_circulant(0.7, 1024, 1.0, 20_000, 4)
        g = b.grid
        for i, j in [(1023, 1023), (511, 1023), (100, 900), (0, 5)]:
            m, se = emp_cov(b.paths[:, i, 0], b.paths[:, j, 0])
            assert abs(m - cov_fbm(g[i], g[j], 0.7)) < 5 * se

    def test_matches_cholesky_in_law(self):
        a = sample_fbm_circulant(0.3, 64, 1.0, 20_000, 5).paths[:, -1, 0]
        b = sample_cholesky(ProcessSpec("fbm", H=0.3), uniform_grid(64), 20_000, 6).paths[:, -1, 0]
        assert stats.ks_2samp(a, b, method="asymp").pvalue > 0.01

    def test_fallback_to_cholesky(self, monkeypatch, caplog):
        def bad(H, n):
            raise SamplingError("circulant embedding has eigenvalue -1")
        monkeypatch.setattr(sampler, "fgn_eigenvalues", bad)
        with caplog.at_level(logging.WARNING):
            b = sample_fbm_circulant(0.3, 16, 1.0, 10, 7)
        assert b.method == "cholesky"
        assert "falling back" in caplog.text

    def test_power_of_two_required(self):
        with pytest.raises(ValueError, match="power of two"):
            sample(ProcessSpec("fbm", H=0.3), 100, 1.0, 4, 0, method="circulant")


class TestRiemannLiouville:
    def test_half_is_bm(self):
        rl = sample_rl_kernel(0.5, 256, 1.0, 300, 8).paths
        bm = sample(ProcessSpec("bm"), 256, 1.0, 300, 8).paths
        assert np.array_equal(rl, bm)

    @pytest.mark.parametrize("alpha", [0.1, 0.25, 0.8])
    def test_variance_exact(self, alpha):
        n, T = 512, 2.0
        w = rl_weights(alpha, n, T / n)
        assert np.sum(w**2) * T / n == pytest.approx(T ** (2 * alpha) / (2 * alpha), rel=1e-12)

    def test_half_point_covariance(self):
        alpha, n, T = 0.25, 4096, 1.0
        dt = T / n
        w = rl_weights(alpha, n, dt)
        a, b = n // 2, n
        # X_j = sum_{i<j} w_{j-1-i} dW_i
        cov = dt * np.sum(w[:a][::-1] * w[b - a:b][::-1])
        assert cov == pytest.approx(float(cov_rl(0.5, 1.0, alpha)), rel=0.01)

    def test_empirical_variance(self):
        b = sample_rl_kernel(0.25, 1024, 1.0, 20_000, 9)
        v = b.paths[:, -1, 0]
        target = 1 / 0.5
        assert abs(v.var() - target) < 4 * target * math.sqrt(2 / v.size)


class TestSubFBM:
    def test_variance(self):
        H = 0.3
        grid = np.linspace(0.0625, 1, 16)
        b = sample_subfbm_decomposed(H, grid, 50_000, 10)
        m, se = emp_cov(b.paths[:, -1, 0], b.paths[:, -1, 0])
        assert abs(m - (2 - 2 ** (2 * H - 1))) < 4 * se

    def test_law_vs_direct(self):
        grid = np.linspace(0.0625, 1, 16)
        a = sample_subfbm_decomposed(0.3, grid, 100_000, 11).paths[:, -1, 0]
        b = sample_cholesky(ProcessSpec("subfbm", H=0.3), grid, 100_000, 12).paths[:, -1, 0]
        assert stats.ks_2samp(a, b, method="asymp").pvalue > 0.01

    def test_gap_to_fbm_vanishes_near_half(self):
        grid = np.linspace(0.1, 1, 10)
        gaps = [np.max(np.abs(cov_subfbm(grid, grid, H) - cov_fbm(grid, grid, H)))
                for H in (0.4, 0.45, 0.49, 0.499)]
        assert all(a > b for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 2e-3


class TestReproducibility:
    @pytest.mark.parametrize("spec", [ProcessSpec("bm"), ProcessSpec("fbm", H=0.3),
                                      ProcessSpec("rl", alpha=0.25), ProcessSpec("bifbm", H=0.6, K=0.5)],
                             ids=lambda s: s.kind)
    def test_thread_count_invariant(self, spec):
        a = sample(spec, 64, 1.0, 1000, 13, threads=1).paths
        b = sample(spec, 64, 1.0, 1000, 13, threads=4).paths
        assert np.array_equal(a, b)

    def test_seed_matters(self):
        a = sample(ProcessSpec("bm"), 32, 1.0, 10, 1).paths
        b = sample(ProcessSpec("bm"), 32, 1.0, 10, 2).paths
        assert not np.array_equal(a, b)

    def test_prefix_stable(self):
        # growing N only appends paths; block streams are keyed by block index
        a = sample(ProcessSpec("fbm", H=0.3), 32, 1.0, 300, 3).paths
        b = sample(ProcessSpec("fbm", H=0.3), 32, 1.0, 700, 3).paths
        assert np.array_equal(a[:256], b[:256])

    def test_stream_blocks_match_collect(self):
        ps = PathStream(ProcessSpec("bm"), uniform_grid(16), 600, 4)
        full = ps.collect().paths
        means = ps.map(lambda x: x.mean(axis=(1, 2)))
        assert np.allclose(means, full.mean(axis=(1, 2)))

    def test_derive_seed_distinct(self):
        assert len({derive_seed(1, k) for k in range(50)}) == 50


def test_roundtrip(tmp_path):
    b = sample(ProcessSpec("fbm", H=0.3, d=2), 32, 2.0, 10, 5)
    p = tmp_path / "b.bin"
    b.write(p)
    c = PathBatch.read(p)
    assert np.array_equal(b.paths, c.paths)
    assert c.spec == b.spec and c.seed == 5 and c.method == b.method
    assert np.allclose(c.grid, b.grid)


@pytest.mark.parametrize("spec", [ProcessSpec("bm"), ProcessSpec("fbm", H=0.3), ProcessSpec("subfbm", H=0.3),
                                  ProcessSpec("bifbm", H=0.6, K=0.5), ProcessSpec("rl", alpha=0.25)],
                         ids=lambda s: s.kind)
def test_self_similarity_in_law(spec):
    a = 3.0
    grid = np.linspace(1 / 32, 1, 32)
    x = sample_cholesky(spec, grid, 100_000, 20).paths[:, -1, 0]
    y = sample_cholesky(spec, a * grid, 100_000, 21).paths[:, -1, 0] * a ** (-spec.self_similarity)
    assert stats.ks_2samp(x, y, method="asymp").pvalue > 0.01


def test_error_shrinks_at_mc_rate():
    spec = ProcessSpec("fbm", H=0.3)
    g = uniform_grid(32)
    exact = cov_fbm(g[15], g[31], 0.3)
    errs = []
    for N in (10_000, 100_000):
        errs.append(np.mean([abs(np.mean(b.paths[:, 15, 0] * b.paths[:, 31, 0]) - exact)
                             for b in (sample(spec, 32, 1.0, N, 100 + r) for r in range(8))]))
    assert errs[0] / errs[1] > 1.8

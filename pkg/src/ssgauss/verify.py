"""Named verification suites: closed loops, quadrature oracles and MC checks.

Each suite returns a list of check records ``{name, value, target, passed, ...}``;
nothing here depends on wall-clock time, so reports are reproducible.
"""
from __future__ import annotations

import math

import numpy as np

from . import ldp, mc, moments
from .covariance import (ProcessSpec, cov_fbm, kernel_kh_covariance, verify_bifbm_identity,
                         verify_subfbm_identity)
from .functionals import FunctionalSpec, scaling_check, simulate_functional
from .sampler import derive_seed

SUITES = ("identities", "moments", "scaling", "tails", "smallball", "constants")

DEFAULT_SIZES = {
    "moments_N": 20000,
    "moments_n": 4096,
    "scaling_N": 100000,
    "scaling_n": 1024,
    "tails_N": 100000,
    "tails_n": 4096,
    "consistency_N": 100000,
    "consistency_n": 4096,
    "smallball_N": 1000000,
    "smallball_n": 1024,
}


def _check(name, value, passed, **extra):
    rec = {"name": name, "value": value, "passed": bool(passed)}
    rec.update(extra)
    return rec


def _f(x):
    return None if x is None else float(x)


def identities(seed=0, threads=None, sizes=None):
    out = []
    grid = np.linspace(0.02, 1.0, 50)
    for H in (0.1, 0.25, 0.4):
        r = verify_subfbm_identity(H, grid)
        out.append(_check(f"subfbm_identity[H={H}]", r, r < 1e-12, tolerance=1e-12))
    for H, K in ((0.6, 0.5), (0.3, 0.8)):
        r = verify_bifbm_identity(H, K, grid)
        out.append(_check(f"bifbm_identity[H={H},K={K}]", r, r < 1e-12, tolerance=1e-12))
    for H in (0.3, 0.7):
        for s, t in ((0.5, 1.0), (0.25, 0.75)):
            val = kernel_kh_covariance(s, t, H)
            err = abs(val - float(cov_fbm(s, t, H)))
            out.append(_check(f"kernel_covariance[H={H},s={s},t={t}]", err, err < 1e-6,
                              tolerance=1e-6))
    return out


def moments_suite(seed=0, threads=None, sizes=None):
    sz = {**DEFAULT_SIZES, **(sizes or {})}
    out = []
    bm = ProcessSpec("bm")
    m1 = moments.exact_delta_moment(bm, 1)
    m2 = moments.exact_delta_moment(bm, 2)
    out.append(_check("bm_exact_m1", m1, abs(m1 - math.sqrt(2 / math.pi)) < 1e-6,
                      target=math.sqrt(2 / math.pi), tolerance=1e-6))
    out.append(_check("bm_exact_m2", m2, abs(m2 - 1.0) < 1e-5, target=1.0, tolerance=1e-5))
    fs = simulate_functional(bm, FunctionalSpec("delta"), sz["moments_n"], 1.0, sz["moments_N"],
                             derive_seed(seed, 11, 0), threads=threads)
    for m in (1, 2):
        ex, ex_err = moments.exact_delta_moment(bm, m, return_error=True)
        mv, se = moments.mc_moment(fs.values, m)
        tol = 3 * math.hypot(se, ex_err)
        out.append(_check(f"mc_vs_exact[bm,m={m}]", mv, abs(mv - ex) <= tol, target=ex, tolerance=tol))
    # rough process: per-eps levels against their exact means (no extrapolation involved)
    rl = ProcessSpec("rl", alpha=0.25)
    fs = simulate_functional(rl, FunctionalSpec("delta"), sz["moments_n"], 1.0, sz["moments_N"],
                             derive_seed(seed, 11, 1), threads=threads)
    for k, e in enumerate(fs.eps):
        ex = moments.mollified_mean(rl, e)
        mv, se = moments.mc_moment(fs.levels[:, k], 1)
        out.append(_check(f"mc_vs_mollified_mean[rl0.25,eps={e:.4g}]", mv, abs(mv - ex) <= 3 * se,
                          target=ex, tolerance=3 * se))
    for m in (1, 2, 3):
        for th in (0.25, 0.5):
            a, b = moments.dirichlet_simplex(m, th), moments.dirichlet_simplex_quad(m, th)
            out.append(_check(f"dirichlet[m={m},theta={th}]", abs(a - b), abs(a - b) < 1e-6,
                              tolerance=1e-6))
    for spec, label in ((bm, "bm"), (ProcessSpec("rl", alpha=0.25), "rl0.25")):
        slack = moments.subadditivity_check(spec, [(1, 1)])[0]
        out.append(_check(f"subadditivity[{label}]", slack, slack >= -1e-4, tolerance=-1e-4))
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(13,)))
    worst = math.inf
    for m in (1, 2):
        for _ in range(100):
            times = np.sort(rng.uniform(0.05, 1.0, m))
            shift = rng.normal(0.0, 1.0, m)
            eps = float(rng.uniform(0.01, 0.5))
            _, margin = moments.shift_inequality_check(bm, times, shift, eps)
            worst = min(worst, margin)
    out.append(_check("shift_inequality_min_margin", worst, worst >= 0.0))
    return out


def scaling(seed=0, threads=None, sizes=None):
    sz = {**DEFAULT_SIZES, **(sizes or {})}
    cases = (
        ("bm_delta_a4", ProcessSpec("bm"), FunctionalSpec("delta"), 4.0),
        ("fbm0.3_riesz1_d2_a2", ProcessSpec("fbm", H=0.3, d=2), FunctionalSpec("riesz", beta=1.0), 2.0),
        ("bifbm0.6_0.5_delta_a2", ProcessSpec("bifbm", H=0.6, K=0.5), FunctionalSpec("delta"), 2.0),
    )
    out = []
    for i, (name, spec, fs, a) in enumerate(cases):
        stat, p = scaling_check(spec, fs, a, sz["scaling_N"], derive_seed(seed, 21, i),
                                n=sz["scaling_n"], threads=threads)
        out.append(_check(f"scaling[{name}]", p, p > 0.01, statistic=stat, tolerance=0.01))
    return out


def tails(seed=0, threads=None, sizes=None):
    sz = {**DEFAULT_SIZES, **(sizes or {})}
    out = []
    fs = simulate_functional(ProcessSpec("bm"), FunctionalSpec("delta"), sz["tails_n"], 1.0,
                             sz["tails_N"], derive_seed(seed, 31), threads=threads)
    tf = mc.tail_fit(fs.values, 2.0, seed=derive_seed(seed, 32))
    out.append(_check("bm_tail_free_exponent", tf.exponent, abs(tf.exponent - 2.0) <= 0.15,
                      target=2.0, tolerance=0.15, ci=tf.exponent_ci))
    out.append(_check("bm_tail_constant_ci", tf.constant, tf.ci[0] <= 0.5 <= tf.ci[1],
                      target=0.5, ci=tf.ci))
    ml = mc.moment_limit_a(fs.values, 0.5, m_max=10)
    rel = abs(ml.tail_constant - 0.5) / 0.5
    out.append(_check("bm_moment_bridge", ml.tail_constant, rel <= 0.2, target=0.5,
                      tolerance=0.2, a=ml.limit, m_max=ml.m_max))
    rep = mc.constant_consistency(0.3, sz["consistency_N"], derive_seed(seed, 33),
                                  n=sz["consistency_n"], threads=threads)
    out.append(_check("fbm_rl_ci_overlap[H=0.3]", rep.fbm["constant"], rep.overlap,
                      ci=rep.fbm["ci"], rl_ci=rep.rl_corrected["ci"]))
    out.append(_check("fbm_ci_meets_chd_bounds[H=0.3]", rep.fbm["constant"], rep.fbm_in_bounds,
                      ci=rep.fbm["ci"], bounds=list(rep.chd_bounds)))
    return out


def smallball(seed=0, threads=None, sizes=None):
    sz = {**DEFAULT_SIZES, **(sizes or {})}
    grid = np.linspace(0.4, 1.0, 13)
    N, n = sz["smallball_N"], sz["smallball_n"]
    s_seed = derive_seed(seed, 41)
    bm = mc.small_ball_fit(ProcessSpec("bm"), grid, N, s_seed, n=n, threads=threads)
    rl = mc.small_ball_fit(ProcessSpec("rl", alpha=0.5), grid, N, s_seed, n=n, threads=threads)
    target = math.pi**2 / 8
    return [
        _check("bm_smallball_exponent", bm.exponent, abs(bm.exponent - 2.0) <= 0.3,
               target=2.0, tolerance=0.3),
        _check("bm_smallball_constant", bm.constant, abs(bm.constant - target) <= 0.25 * target,
               target=target, tolerance=0.25),
        _check("rl0.5_matches_bm", rl.constant, rl.prob == bm.prob, target=bm.constant),
    ]


def constants(seed=0, threads=None, sizes=None):
    out = []
    lo, hi = ldp.chd_bounds(0.5, 1)
    out.append(_check("chd_bounds_bm", [lo, hi], abs(lo - 0.5) < 1e-12 and abs(hi - 0.5) < 1e-12,
                      target=0.5, tolerance=1e-12))
    e1 = ldp.e1_from_chd(0.5, 0.5, 1)
    out.append(_check("e1_bm", e1, abs(e1 - 0.5) < 1e-12, target=0.5))
    C, p = ldp.rate_from_lambda(e1, 0.5)
    out.append(_check("rate_bm", [C, p], abs(C - 0.5) < 1e-12 and p == 2.0, target=[0.5, 2.0]))
    worst = 0.0
    for lam in (0.1, 1.0, 10.0):
        num = ldp.legendre_numeric(lam, e1, 0.5)
        worst = max(worst, abs(num - lam**2 / 2) / (lam**2 / 2))
    out.append(_check("legendre_bm", worst, worst < 1e-8, tolerance=1e-8))
    rc = ldp.RateConstants(0.5, E1=e1)
    expect = {1.5: ["finite"] * 3, 2.0: ["critical-finite", "unknown", "critical-infinite"],
              3.0: ["infinite"] * 3}
    got = {p: [ldp.integrability_classify(p, lam, rc) for lam in (0.4, 0.5, 0.6)] for p in expect}
    out.append(_check("integrability_bm_nine_cases", {str(k): v for k, v in got.items()},
                      got == expect, target={str(k): v for k, v in expect.items()}))
    pref = ldp.bifbm_critical_prefactor(0.5, 0.5, 1.0, p=4.0)
    out.append(_check("bifbm_critical_prefactor", pref, abs(pref - 2.0) < 1e-12, target=2.0))
    return out


RUNNERS = {
    "identities": identities,
    "moments": moments_suite,
    "scaling": scaling,
    "tails": tails,
    "smallball": smallball,
    "constants": constants,
}


def run(suite, seed=0, threads=None, sizes=None):
    names = SUITES if suite == "all" else (suite,)
    if any(n not in RUNNERS for n in names):
        raise ValueError(f"suite: unknown suite {suite!r}, expected one of {SUITES + ('all',)}")
    checks = []
    for name in names:
        for rec in RUNNERS[name](seed=seed, threads=threads, sizes=sizes):
            rec["suite"] = name
            checks.append(rec)
    return checks

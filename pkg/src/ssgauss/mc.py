"""Monte Carlo estimators closing the loop against the closed-form constants.

Tail constants are fitted on the empirical survival function of functional
samples, moment growth rates are bridged to tail constants, and small-ball
exponents are read off sup-norm hit probabilities.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, stats
from scipy.special import gammaln

from .covariance import ProcessSpec
from .functionals import FunctionalSpec, simulate_functional
from .ldp import chd_bounds, moment_tail_bridge
from .sampler import PathStream, derive_seed, uniform_grid
from .specfun import alpha_h

log = logging.getLogger(__name__)

__all__ = [
    "TailFitError",
    "TailFit",
    "tail_fit",
    "survival_curve",
    "MomentLimit",
    "moment_limit_a",
    "SmallBallFit",
    "small_ball_fit",
    "sup_norm_samples",
    "write_survival_csv",
    "lower_bound_exp_check",
    "ks_two_sample",
    "ConsistencyReport",
    "constant_consistency",
    "ci_overlap",
    "write_json",
]

DEFAULT_WINDOW = (0.90, 0.999)
SENSITIVITY_WINDOWS = ((0.80, 0.99), (0.90, 0.999), (0.95, 0.999))


class TailFitError(ValueError):
    pass


def _seeded(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(keys)))


def ci_overlap(a, b) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


# ---------------------------------------------------------------- tail fits


@dataclass
class TailFit:
    exponent: float  # fitted (free) tail power of x
    constant: float  # C-hat of the reported mode
    x_lo: float
    x_hi: float
    ci: tuple | None  # bootstrap CI for ``constant``
    exponent_ci: tuple | None
    N: int
    n_tail: int
    mode: str  # fixed | free
    fixed_exponent: float | None = None
    constant_free: float | None = None
    constant_free_ci: tuple | None = None
    prefactor_power: float | None = None
    window: tuple = DEFAULT_WINDOW
    sensitivity: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def survival_curve(samples):
    """(x, log S(x)) at the sorted samples with S(x) = #{X >= x} / N."""
    x = np.sort(np.asarray(samples, dtype=float))
    N = x.size
    return x, np.log((N - np.arange(N)) / N)


def _window_points(x, logS, window, max_points=400):
    N = x.size
    lo = int(math.floor(window[0] * N))
    hi = min(int(math.ceil(window[1] * N)) - 1, N - 1)
    n_tail = hi - lo + 1
    if n_tail < 50:
        raise TailFitError(f"insufficient tail: {n_tail} points in window {window} (need 50)")
    idx = np.arange(lo, hi + 1)
    if idx.size > max_points:
        # roughly even spacing in log survival
        targets = np.linspace(logS[lo], logS[hi], max_points)
        idx = np.unique(np.searchsorted(-logS, -targets).clip(lo, hi))
    return x[idx], logS[idx], n_tail


def _design(x, p, prefactor):
    cols = [np.ones_like(x), -(x**p)]
    if prefactor:
        cols.append(-np.log(x))
    return np.stack(cols, axis=1)


def _lsq(x, y, p, prefactor, w=None):
    A = _design(x, p, prefactor)
    if w is not None:
        A, y = A * w[:, None], y * w
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    return coef, float(r @ r)


def _fit_once(x, y, fixed_p, prefactor, p_range):
    """Constant at the fixed exponent and the free (exponent, constant) pair.

    The fixed-exponent fit carries the -kappa log x prefactor term and is
    weighted by the binomial precision of log S; the free fit is the plain
    unweighted two-parameter regression, which stays identifiable on a
    finite window (kappa and p are nearly collinear there).
    """
    out = {}
    if fixed_p is not None:
        S = np.exp(y)
        w = np.sqrt(S / np.maximum(1.0 - S, 1e-300))
        coef, _ = _lsq(x, y, fixed_p, prefactor, w)
        out["C_fixed"] = coef[1]
        out["kappa_fixed"] = coef[2] if prefactor else 0.0
    f = lambda lp: _lsq(x, y, math.exp(lp), False)[1]
    grid = np.linspace(math.log(p_range[0]), math.log(p_range[1]), 81)
    k = int(np.argmin([f(g) for g in grid]))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-9})
    p = math.exp(res.x)
    coef, _ = _lsq(x, y, p, False)
    out.update(p_free=p, C_free=coef[1])
    return out


def tail_fit(samples, exponent=None, *, mode=None, window=DEFAULT_WINDOW, prefactor=True,
             n_boot=200, seed=0, level=0.95, sensitivity=True) -> TailFit:
    """Fit the log empirical survival over the quantile window.

    With ``exponent`` given (``mode='fixed'``, the default then) the constant
    is fitted from log S = b - C x^p - kappa log x with p fixed; the free
    regression log S = b - C x^p is always reported alongside and is the
    estimate in ``mode='free'``. ``prefactor=False`` drops the kappa term.
    """
    samples = np.asarray(samples, dtype=float)
    if not np.all(np.isfinite(samples)):
        raise TailFitError("samples contain non-finite values")
    mode = mode or ("fixed" if exponent is not None else "free")
    if mode not in ("fixed", "free"):
        raise ValueError(f"mode must be 'fixed' or 'free', got {mode!r}")
    if mode == "fixed" and exponent is None:
        raise ValueError("fixed mode needs the theoretical exponent")
    x, logS = survival_curve(samples)
    xs, ys, n_tail = _window_points(x, logS, window)
    if xs[0] <= 0:
        raise TailFitError("tail window must lie in x > 0")
    p0 = exponent or 1.0
    p_range = (0.2 * p0, 5.0 * p0)
    est = _fit_once(xs, ys, exponent, prefactor, p_range)

    ci = exp_ci = free_ci = None
    if n_boot and samples.size >= 1000:
        rng = _seeded(seed, 0xB007)
        boots = []
        for _ in range(n_boot):
            bs = rng.choice(samples, samples.size, replace=True)
            bx, bl = survival_curve(bs)
            try:
                bxs, bys, _ = _window_points(bx, bl, window)
                if bxs[0] > 0:
                    boots.append(_fit_once(bxs, bys, exponent, prefactor, p_range))
            except TailFitError:
                continue
        q = [(1 - level) / 2 * 100, (1 + level) / 2 * 100]
        pct = lambda key: tuple(float(v) for v in np.percentile([b[key] for b in boots], q))
        exp_ci = pct("p_free")
        free_ci = pct("C_free")
        ci = pct("C_fixed") if mode == "fixed" else free_ci

    sens = {}
    if sensitivity:
        for w in SENSITIVITY_WINDOWS:
            try:
                wx, wy, _ = _window_points(x, logS, w)
                if wx[0] <= 0:
                    continue
                e = _fit_once(wx, wy, exponent, prefactor, p_range)
                sens[f"{w[0]:g}-{w[1]:g}"] = float(e["C_fixed"] if mode == "fixed" else e["C_free"])
            except TailFitError:
                pass

    C = est["C_fixed"] if mode == "fixed" else est["C_free"]
    if not C > 0:
        raise TailFitError(f"fitted constant is not positive ({C:.4g}); tail window too short")
    return TailFit(
        exponent=float(est["p_free"]), constant=float(C), x_lo=float(xs[0]), x_hi=float(xs[-1]),
        ci=ci, exponent_ci=exp_ci, N=int(samples.size), n_tail=int(n_tail), mode=mode,
        fixed_exponent=None if exponent is None else float(exponent),
        constant_free=float(est["C_free"]), constant_free_ci=free_ci,
        prefactor_power=float(est.get("kappa_fixed", 0.0)) if prefactor and exponent else None,
        window=tuple(window), sensitivity=sens,
    )


# ---------------------------------------------------------- moment route


@dataclass
class MomentLimit:
    orders: list
    a_hat: list
    a_se: list
    limit: float
    limit_se: float
    p: float
    tail_constant: float
    tail_constant_ci: tuple
    monotone: bool
    m_max: int
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def moment_limit_a(samples, ab, m_max=10, m_min=2, rel_se_max=0.5, neg_tol=0.5) -> MomentLimit:
    """Estimate lim (1/m) log(E F^m / (m!)^ab) and bridge it to a tail constant.

    The sequence a_m is fitted by a + b log(m)/m + c/m (weighted by the
    delta-method standard errors) over m_min..m_max. Negative samples no
    larger in size than neg_tol times the mean are treated as 0.
    """
    if not 0 < ab < 1:
        raise ValueError(f"ab must lie in (0, 1), got {ab}")
    if m_max > 12:
        raise ValueError("m_max is capped at 12")
    F = np.asarray(samples, dtype=float)
    N = F.size
    warn = []
    # extrapolated local times can dip slightly below zero; clip those, reject real negatives
    neg = F < 0
    if np.any(neg):
        if F.min() < -neg_tol * abs(F.mean()):
            raise ValueError("moment route needs non-negative samples")
        msg = f"clipped {int(neg.sum())} slightly negative samples (min {F.min():.3g}) to 0"
        warn.append(msg)
        log.warning(msg)
        F = np.where(neg, 0.0, F)
    # scale out the mean so that high powers stay finite
    s = F.mean()
    orders, a, se = [], [], []
    for m in range(1, m_max + 1):
        v = (F / s) ** m
        mean = v.mean()
        rse = v.std(ddof=1) / math.sqrt(N) / mean
        if rse > rel_se_max:
            msg = f"relative standard error {rse:.2f} at m={m}; truncating m_max to {m - 1}"
            warn.append(msg)
            log.warning(msg)
            break
        orders.append(m)
        a.append((math.log(mean) + m * math.log(s) - ab * gammaln(m + 1)) / m)
        se.append(rse / m)
    m_arr = np.array(orders, dtype=float)
    a_arr, se_arr = np.array(a), np.array(se)
    sel = m_arr >= m_min
    if sel.sum() < 3:
        raise ValueError(f"need at least 3 usable orders >= {m_min}, have {int(sel.sum())}")
    mm, yy, ww = m_arr[sel], a_arr[sel], 1.0 / np.maximum(se_arr[sel], 1e-12)
    A = np.stack([np.ones_like(mm), np.log(mm) / mm, 1.0 / mm], axis=1)
    coef, *_ = np.linalg.lstsq(A * ww[:, None], yy * ww, rcond=None)
    cov = np.linalg.pinv((A * ww[:, None]).T @ (A * ww[:, None]))
    # moment estimates are strongly correlated across m; inflate by the order count
    lim_se = float(math.sqrt(cov[0, 0] * sel.sum()))
    lim = float(coef[0])
    C = -moment_tail_bridge(lim, ab)
    C_ci = tuple(sorted((-moment_tail_bridge(lim - 1.96 * lim_se, ab),
                         -moment_tail_bridge(lim + 1.96 * lim_se, ab))))
    diffs = np.diff(a_arr)
    monotone = bool(np.all(diffs >= 0) or np.all(diffs <= 0))
    return MomentLimit(orders, a, se, lim, lim_se, float(ab), float(C), C_ci, monotone,
                       int(orders[-1]), warn)


# ---------------------------------------------------------- small balls


@dataclass
class SmallBallFit:
    exponent: float  # free-fit e of eps^-e
    constant: float  # c0 at the fixed exponent
    constant_free: float
    fixed_exponent: float
    eps: list
    prob: list
    hits: list
    N: int
    n: int
    dropped: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _sup_abs(paths):
    # sup over time of the Euclidean norm, per path
    if paths.shape[-1] == 1:
        return np.abs(paths[..., 0]).max(axis=1)
    return np.sqrt((paths**2).sum(axis=-1)).max(axis=1)


def sup_norm_samples(spec, n, N, seed, method=None, threads=None, T=1.0, stream=0):
    ps = PathStream(spec, uniform_grid(n, T), N, seed, method, stream)
    return ps.map(_sup_abs, threads)


def _fit_small_ball(eps, y, e):
    A = np.stack([eps ** (-e), np.ones_like(eps)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    return coef, float(r @ r)


def small_ball_fit(spec: ProcessSpec, eps_grid, N: int, seed: int, n: int = 1024,
                   method=None, threads=None, sups=None) -> SmallBallFit:
    """Fit -log P(sup_[0,1] |X| <= eps) = c0 eps^-e + k, e fixed to 1/alpha_ss or free."""
    eps = np.sort(np.asarray(eps_grid, dtype=float))[::-1]
    if np.any(eps <= 0):
        raise ValueError("eps grid must be positive")
    if sups is None:
        sups = sup_norm_samples(spec, n, N, seed, method, threads)
    N = sups.size
    hits = np.array([(sups <= e).sum() for e in eps])
    keep = hits >= 10
    dropped = [float(e) for e in eps[~keep]]
    for e in dropped:
        log.warning("small-ball level eps=%g has fewer than 10 hits; dropped", e)
    if keep.sum() < 3:
        raise ValueError("fewer than 3 usable eps levels")
    ek, pk = eps[keep], hits[keep] / N
    y = -np.log(pk)
    e_fix = 1.0 / spec.self_similarity
    coef_fix, _ = _fit_small_ball(ek, y, e_fix)
    f = lambda le: _fit_small_ball(ek, y, math.exp(le))[1]
    res = optimize.minimize_scalar(f, bounds=(math.log(0.2 * e_fix), math.log(5 * e_fix)),
                                   method="bounded", options={"xatol": 1e-8})
    e_free = math.exp(res.x)
    coef_free, _ = _fit_small_ball(ek, y, e_free)
    return SmallBallFit(float(e_free), float(coef_fix[0]), float(coef_free[0]), e_fix,
                        [float(v) for v in eps], [float(v) for v in hits / N],
                        [int(v) for v in hits], int(N), int(n), dropped)


def lower_bound_exp_check(alpha: float, beta: float, t_grid, c0: float, d: int = 1):
    """Event-based lower bound for (1/t) log E exp(int_0^t |X_s|^-beta ds), RL process.

    On S = {sup_[0,1] |X^i| <= eps for every coordinate} one has |X_s| <= eps sqrt(d),
    so the integral over [0, t] is at least c_d t^(1-ab) eps^-beta with
    c_d = d^(-beta/2), while P(S) >= exp(-c0 d eps^(-1/alpha)). The bound is
    evaluated at eps(t) = (2 c0 d / c_d)^(alpha/(1-ab)) t^-alpha.
    """
    ab = alpha * beta
    if not 0 < ab < 1:
        raise ValueError(f"need 0 < alpha*beta < 1, got {ab}")
    if not c0 > 0:
        raise ValueError("c0 must be positive")
    cd = d ** (-beta / 2)
    rows = []
    for t in np.atleast_1d(np.asarray(t_grid, dtype=float)):
        eps = (2 * c0 * d / cd) ** (alpha / (1 - ab)) * t ** (-alpha)
        bound = cd * t ** (1 - ab) * eps ** (-beta) - c0 * d * eps ** (-1 / alpha)
        rows.append({"t": float(t), "eps": float(eps), "bound": float(bound),
                     "margin": float(bound / t)})
    return rows


def ks_two_sample(a, b):
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 100 or b.size < 100:
        raise ValueError(f"KS test needs >= 100 samples per arm, got {a.size} and {b.size}")
    res = stats.ks_2samp(a, b, method="asymp")
    return float(res.statistic), float(res.pvalue)


# ------------------------------------------------------- fBm vs RL


@dataclass
class ConsistencyReport:
    H: float
    d: int
    beta: float
    multiplier: float
    fbm: dict
    rl_corrected: dict
    overlap: bool
    chd_bounds: tuple | None
    fbm_in_bounds: bool | None

    def to_dict(self):
        return asdict(self)


def constant_consistency(H: float, N: int, seed: int, fspec: FunctionalSpec | None = None,
                         d: int = 1, n: int = 4096, threads=None, n_boot=200) -> ConsistencyReport:
    """Tail constants of fBm and of the RL process scaled onto it.

    fBm decomposes as m_H X^H + (independent smoother part) with
    m_H = 1 / alpha_h(H), so the fBm constant is compared with the tail
    constant of m_H^-beta_eff times the RL functional.
    """
    fspec = fspec or FunctionalSpec("delta")
    fbm = ProcessSpec("fbm", H=H, d=d)
    rl = ProcessSpec("rl", alpha=H, d=d)
    ab = fspec.validate(fbm)
    beta = fspec.effective_beta(d)
    mult = 1.0 / alpha_h(H)
    f_vals = simulate_functional(fbm, fspec, n, 1.0, N, derive_seed(seed, 1), threads=threads).values
    r_vals = simulate_functional(rl, fspec, n, 1.0, N, derive_seed(seed, 2), threads=threads).values
    r_vals = mult ** (-beta) * r_vals
    tf = tail_fit(f_vals, 1.0 / ab, n_boot=n_boot, seed=derive_seed(seed, 3))
    tr = tail_fit(r_vals, 1.0 / ab, n_boot=n_boot, seed=derive_seed(seed, 4))
    bounds = in_bounds = None
    if fspec.kind == "delta":
        bounds = chd_bounds(H, d)
        in_bounds = ci_overlap(tf.ci, bounds)
    return ConsistencyReport(H, d, float(beta), float(mult), tf.to_dict(), tr.to_dict(),
                             ci_overlap(tf.ci, tr.ci), bounds, in_bounds)


def write_json(obj, path) -> None:
    data = obj.to_dict() if hasattr(obj, "to_dict") else obj
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)


def write_survival_csv(samples, path) -> None:
    x, ls = survival_curve(samples)
    with open(path, "w") as fh:
        fh.write("x,log_survival\n")
        for a, b in zip(x, ls):
            fh.write(f"{float(a)!r},{float(b)!r}\n")

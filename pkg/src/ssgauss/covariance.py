"""Covariance kernels, covariance matrices and the decomposition identities.

All kernels take broadcastable ``(s, t)`` arrays and return the covariance of
one coordinate; the ``d`` coordinates of a process are i.i.d. copies.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .specfun import gamma_fn, gauss_2f1

__all__ = [
    "ProcessSpec",
    "CovMatrix",
    "NotPSDError",
    "cov_fbm",
    "cov_subfbm",
    "cov_bifbm",
    "cov_y",
    "cov_rl",
    "cov_rl_quad",
    "cov_rl_jacobi",
    "kernel_kh",
    "kernel_kh_covariance",
    "build_cov_matrix",
    "det_factorization",
    "c_alpha",
    "cubic_patch",
    "verify_subfbm_identity",
    "verify_bifbm_identity",
]

KINDS = ("bm", "fbm", "subfbm", "bifbm", "rl", "auxy")


@dataclass(frozen=True)
class ProcessSpec:
    """Which self-similar Gaussian process, its parameters and dimension.

    ``H`` is used by fbm/subfbm/bifbm, ``K`` by bifbm, ``alpha`` by rl/auxy.
    """

    kind: str
    H: float | None = None
    K: float | None = None
    alpha: float | None = None
    d: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind: unknown process {self.kind!r}, expected one of {KINDS}")
        if not (isinstance(self.d, (int, np.integer)) and self.d >= 1):
            raise ValueError(f"d: dimension must be a positive integer, got {self.d!r}")
        if self.kind in ("fbm", "subfbm", "bifbm"):
            if self.H is None or not 0.0 < self.H < 1.0:
                raise ValueError(f"H: Hurst index must lie in (0, 1), got {self.H!r}")
        if self.kind == "bifbm":
            if self.K is None or not 0.0 < self.K <= 1.0:
                raise ValueError(f"K: must lie in (0, 1], got {self.K!r}")
        if self.kind == "rl":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ValueError(f"alpha: must lie in (0, 1) for rl, got {self.alpha!r}")
        if self.kind == "auxy":
            if self.alpha is None or not 0.0 < self.alpha < 0.5:
                raise ValueError(f"alpha: must lie in (0, 1/2) for auxy, got {self.alpha!r}")

    @property
    def self_similarity(self) -> float:
        if self.kind == "bm":
            return 0.5
        if self.kind in ("fbm", "subfbm"):
            return self.H
        if self.kind == "bifbm":
            return self.H * self.K
        return self.alpha

    def cov(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        if self.kind == "bm":
            return np.minimum(s, t)
        if self.kind == "fbm":
            return cov_fbm(s, t, self.H)
        if self.kind == "subfbm":
            return cov_subfbm(s, t, self.H)
        if self.kind == "bifbm":
            return cov_bifbm(s, t, self.H, self.K)
        if self.kind == "rl":
            return cov_rl(s, t, self.alpha)
        return cov_y(s, t, self.alpha)

    def variance_scale(self) -> float:
        """Var(X_1) of one coordinate; Var(X_t) = variance_scale * t^(2 alpha_ss)."""
        return float(self.cov(1.0, 1.0))

    def variance(self, t):
        t = np.asarray(t, dtype=float)
        return self.variance_scale() * t ** (2 * self.self_similarity)

    def to_dict(self):
        return {"kind": self.kind, "H": self.H, "K": self.K, "alpha": self.alpha, "d": int(self.d)}

    @classmethod
    def from_dict(cls, data):
        return cls(kind=data["kind"], H=data.get("H"), K=data.get("K"),
                   alpha=data.get("alpha"), d=int(data.get("d", 1)))


def _pow(x, p):
    # 0^p = 0 for p > 0 without warnings
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, np.abs(x) ** p, 0.0)


def cov_fbm(s, t, H):
    s, t = np.asarray(s, float), np.asarray(t, float)
    return 0.5 * (_pow(t, 2 * H) + _pow(s, 2 * H) - _pow(np.abs(t - s), 2 * H))


def cov_subfbm(s, t, H):
    s, t = np.asarray(s, float), np.asarray(t, float)
    return (_pow(t, 2 * H) + _pow(s, 2 * H)
            - 0.5 * (_pow(t + s, 2 * H) + _pow(np.abs(t - s), 2 * H)))


def cov_bifbm(s, t, H, K):
    s, t = np.asarray(s, float), np.asarray(t, float)
    val = 2.0 ** (-K) * (_pow(_pow(t, 2 * H) + _pow(s, 2 * H), K) - _pow(np.abs(t - s), 2 * H * K))
    # (t^2H)^K and t^2HK differ in the last bit; the process starts at 0 exactly
    return np.where((s > 0) & (t > 0), val, 0.0)


def cov_y(s, t, alpha):
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 1/2) for the auxiliary process, got {alpha}")
    s, t = np.asarray(s, float), np.asarray(t, float)
    c = gamma_fn(1.0 - 2.0 * alpha) / (2.0 * alpha)
    return c * (_pow(t, 2 * alpha) + _pow(s, 2 * alpha) - _pow(t + s, 2 * alpha))


def cov_rl_quad(s, t, alpha, rtol=1e-12):
    """Reference off-diagonal RL covariance by adaptive quadrature.

    int_0^{s^t} ((t-u)(s-u))^(alpha-1/2) du with the endpoint singularity at
    u = min(s, t) carried by an algebraic weight.
    """
    lo, hi = min(s, t), max(s, t)
    if lo <= 0.0:
        return 0.0
    a = alpha - 0.5
    if hi == lo:
        return lo ** (2 * alpha) / (2 * alpha)
    val, err, info = integrate.quad(lambda u: (hi - u) ** a, 0.0, lo, weight="alg",
                                    wvar=(0.0, a), epsabs=0.0, epsrel=rtol, limit=400,
                                    full_output=True)[:3]
    if err > max(1e3 * rtol * abs(val), 1e-14):
        raise ArithmeticError(f"cov_rl quadrature did not converge at (s, t)=({s}, {t}): err {err:.2e}")
    return val


def cov_rl_jacobi(s, t, alpha, n=200):
    """Gauss-Jacobi cross-check rule for the RL covariance."""
    lo, hi = min(s, t), max(s, t)
    if lo <= 0.0:
        return 0.0
    a = alpha - 0.5
    # u = lo (1 + x) / 2, weight (1 - x)^a absorbs (lo - u)^a
    x, w = special.roots_jacobi(n, a, 0.0)
    u = 0.5 * lo * (1.0 + x)
    return float(np.sum(w * (hi - u) ** a) * (0.5 * lo) ** (a + 1))


def cov_rl(s, t, alpha):
    """Riemann-Liouville covariance R(s, t) = int_0^{s^t} ((t-u)(s-u))^(alpha-1/2) du.

    Vectorised closed form: with v = s^t - u and delta = |t - s|,
    R = delta^a lo^(a+1) / (a+1) * 2F1(-a, a+1; a+2; -lo/delta), a = alpha - 1/2.
    """
    s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
    lo = np.minimum(s, t)
    delta = np.abs(t - s)
    a = alpha - 0.5
    out = np.zeros(lo.shape)
    diag = (delta == 0) & (lo > 0)
    out[diag] = lo[diag] ** (2 * alpha) / (2 * alpha)
    off = (delta > 0) & (lo > 0)
    if np.any(off):
        if a == 0.0:
            out[off] = lo[off]
        else:
            l, dl = lo[off], delta[off]
            out[off] = dl**a * l ** (a + 1) / (a + 1) * special.hyp2f1(-a, a + 1, a + 2, -l / dl)
    return out if out.ndim else float(out)


def _c_h(H):
    return math.sqrt(2 * H * special.gamma(1.5 - H) / (special.gamma(2 - 2 * H) * special.gamma(H + 0.5)))


def kernel_kh(t, s, H):
    """Molchan-Golosov kernel K_H(t, s) for 0 < s < t."""
    if not 0.0 < H < 1.0:
        raise ValueError(f"H must lie in (0, 1), got {H}")
    if not 0.0 < s < t:
        raise ValueError(f"kernel_kh needs 0 < s < t, got s={s}, t={t}")
    if H == 0.5:
        return 1.0
    return _c_h(H) * (t - s) ** (H - 0.5) * gauss_2f1(H - 0.5, 0.5 - H, H + 0.5, 1.0 - t / s)


def kernel_kh_covariance(s, t, H, rtol=1e-10):
    """int_0^{s^t} K_H(t, r) K_H(s, r) dr by algebraically weighted quadrature.

    Near r = 0 each kernel behaves like r^(-|H - 1/2|); near r = s^t the
    kernel with the smaller time behaves like (s^t - r)^(H - 1/2).
    """
    lo, hi = min(s, t), max(s, t)
    if lo <= 0.0:
        return 0.0
    e0 = -abs(2 * H - 1)
    e1 = H - 0.5

    def clamp(r):
        # QAWS samples the endpoints; the smooth factor is continuous there
        return min(max(r, lo * 1e-13), lo * (1 - 1e-13))

    def smooth(r):
        r = clamp(r)
        if hi > lo:
            kh = kernel_kh(hi, r, H)
        else:
            kh = kernel_kh(lo, r, H)
        kl = kernel_kh(lo, r, H) / (lo - r) ** e1
        return kh * kl / r**e0

    if hi == lo:
        # both kernels singular at r = lo
        def smooth_diag(r):
            r = clamp(r)
            k = kernel_kh(lo, r, H) / (lo - r) ** e1
            return k * k / r**e0
        return integrate.quad(smooth_diag, 0.0, lo, weight="alg", wvar=(e0, 2 * e1),
                              epsabs=0.0, epsrel=rtol, limit=400)[0]
    return integrate.quad(smooth, 0.0, lo, weight="alg", wvar=(e0, e1),
                          epsabs=0.0, epsrel=rtol, limit=400)[0]


class NotPSDError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class CovMatrix:
    times: np.ndarray
    matrix: np.ndarray
    spec: ProcessSpec | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, float))
        object.__setattr__(self, "matrix", np.asarray(self.matrix, float))


def _check_grid(grid):
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 1:
        raise ValueError("grid must be a non-empty 1-d sequence of times")
    if g[0] <= 0:
        raise ValueError("grid must start strictly after 0 (processes vanish at the origin)")
    if np.any(np.diff(g) <= 0):
        raise ValueError("grid must be strictly increasing")
    return g


def psd_check(matrix, tol=1e-10):
    scale = float(np.max(np.diag(matrix))) if matrix.size else 0.0
    eig = np.linalg.eigvalsh(matrix)
    if eig[0] < -tol * scale:
        raise NotPSDError(
            f"covariance matrix is not PSD: most negative eigenvalue {eig[0]:.3e} "
            f"(tolerance {-tol * scale:.3e})"
        )
    return eig


def build_cov_matrix(spec: ProcessSpec, grid, check=True) -> CovMatrix:
    """Pairwise covariance of one coordinate on a positive increasing grid."""
    g = _check_grid(grid)
    m = spec.cov(g[:, None], g[None, :])
    m = np.asarray(m, dtype=float)
    m = 0.5 * (m + m.T)
    if check:
        psd_check(m)
    return CovMatrix(g, m, spec)


def det_factorization(cm) -> np.ndarray:
    """Successive conditional variances Var(X_{s_i} | X_{s_1}, ..., X_{s_{i-1}}).

    Their product is det(cm). Computed as squared Cholesky diagonals.
    """
    mat = cm.matrix if isinstance(cm, CovMatrix) else np.asarray(cm, float)
    try:
        L = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise NotPSDError(f"Cholesky factorisation failed: {exc}") from exc
    return np.diag(L) ** 2


def c_alpha(alpha):
    """Increment-variance constant of the RL process.

    int_0^inf [(1+u)^(alpha-1/2) - u^(alpha-1/2)]^2 du + 1/(2 alpha), in the
    closed form Gamma(alpha+1/2)^2 / (Gamma(2 alpha + 1) sin(pi alpha)).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return math.exp(2 * special.gammaln(alpha + 0.5) - special.gammaln(2 * alpha + 1)) / math.sin(math.pi * alpha)


def cubic_patch(eps, y_at_eps, m_at_eps):
    """Coefficients of p(t) = a1 t^2 + a2 t^3 matching value and slope at eps."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    a1 = 3.0 * y_at_eps / eps**2 - m_at_eps / eps
    a2 = -2.0 * y_at_eps / eps**3 + m_at_eps / eps**2
    return a1, a2


def _pair_grid(grid):
    g = np.asarray(grid, dtype=float)
    return g[:, None], g[None, :]


def verify_subfbm_identity(H, grid):
    """max |cov_subfbm - cov_fbm - H(1-2H)/Gamma(2-2H) cov_y(., ., H)| on grid pairs."""
    if not 0.0 < H < 0.5:
        raise ValueError(f"H must lie in (0, 1/2), got {H}")
    s, t = _pair_grid(grid)
    c2 = H * (1 - 2 * H) / gamma_fn(2 - 2 * H)
    resid = cov_subfbm(s, t, H) - cov_fbm(s, t, H) - c2 * cov_y(s, t, H)
    return float(np.max(np.abs(resid)))


def verify_bifbm_identity(H, K, grid):
    """max |cov_bifbm + K/(2^K Gamma(1-K)) cov_y(t^2H, s^2H, K/2) - 2^(1-K) cov_fbm(., ., HK)|."""
    if not (0.0 < H < 1.0 and 0.0 < K <= 1.0):
        raise ValueError(f"need H in (0,1), K in (0,1], got H={H}, K={K}")
    s, t = _pair_grid(grid)
    lhs = cov_bifbm(s, t, H, K)
    if K < 1.0:
        lhs = lhs + K / (2**K * gamma_fn(1 - K)) * cov_y(t ** (2 * H), s ** (2 * H), K / 2)
    rhs = 2.0 ** (1 - K) * cov_fbm(s, t, H * K)
    return float(np.max(np.abs(lhs - rhs)))

"""Closed-form large-deviation constants for self-similar occupation functionals.

With ab = alpha_ss * beta in (0, 1) the scaled cumulant generating function
is Lambda(theta) = E1 * theta^(1/(1-ab)) and its Legendre transform is the
rate I(lambda) = C * lambda^(1/ab). Everything here is a pure function.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .specfun import beta_fn, log_phi_fn

__all__ = [
    "RateConstants",
    "lambda_fn",
    "rate_from_lambda",
    "rate_fn",
    "legendre_numeric",
    "moment_tail_bridge",
    "c_h_bounds_constant",
    "chd_bounds",
    "e1_from_chd",
    "bifbm_prefactors",
    "bifbm_critical_prefactor",
    "integrability_classify",
    "mgf_growth_bound",
]


def _check_ab(ab):
    if not 0.0 < ab < 1.0:
        raise ValueError(f"alpha_ss * beta must lie in (0, 1), got {ab}")


@dataclass
class RateConstants:
    ab: float
    E1: float | None = None
    C: float | None = None
    bounds: tuple | None = None  # (lo, hi) for C
    provenance: str = "closed-form"  # closed-form | bounds-only | mc-estimated
    ci: tuple | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_ab(self.ab)
        if self.provenance not in ("closed-form", "bounds-only", "mc-estimated"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.E1 is not None and not self.E1 > 0:
            raise ValueError("E1 must be positive")
        if self.C is not None and not self.C > 0:
            raise ValueError("C must be positive")
        if self.E1 is not None and self.C is None:
            self.C = rate_from_lambda(self.E1, self.ab)[0]
        elif self.C is not None and self.E1 is None:
            self.E1 = e1_from_c(self.C, self.ab)

    @property
    def critical_p(self) -> float:
        return 1.0 / self.ab

    def to_dict(self):
        d = asdict(self)
        d["critical_p"] = self.critical_p
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def lambda_fn(theta, E1, ab):
    """Lambda(theta) = E1 * theta^(1/(1-ab))."""
    _check_ab(ab)
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0):
        raise ValueError("theta must be non-negative")
    out = E1 * theta ** (1.0 / (1.0 - ab))
    return float(out) if out.ndim == 0 else out


def rate_from_lambda(E1, ab):
    """Tail constant C and exponent 1/ab dual to Lambda(theta) = E1 theta^(1/(1-ab)).

    C = E1^(1 - 1/ab) (1 - ab)^(1/ab - 1) ab, evaluated in log space.
    """
    _check_ab(ab)
    if not E1 > 0:
        raise ValueError("E1 must be positive")
    logC = (1 - 1 / ab) * math.log(E1) + (1 / ab - 1) * math.log1p(-ab) + math.log(ab)
    return math.exp(logC), 1.0 / ab


def e1_from_c(C, ab):
    """Inverse of :func:`rate_from_lambda` in E1."""
    _check_ab(ab)
    # C = E1^(-(1-ab)/ab) * K  =>  E1 = (C / K)^(-ab/(1-ab))
    logK = (1 / ab - 1) * math.log1p(-ab) + math.log(ab)
    return math.exp(-(ab / (1 - ab)) * (math.log(C) - logK))


def rate_fn(lam, E1, ab):
    """I(lambda) = C lambda^(1/ab) on [0, inf); strictly increasing."""
    C, p = rate_from_lambda(E1, ab)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("rate function domain is [0, inf)")
    out = C * lam**p
    return float(out) if out.ndim == 0 else out


def legendre_numeric(lam, E1, ab, grid_points=4001):
    """sup_{theta > 0} (theta lam - Lambda(theta)) by a log-grid scan then bounded refinement.

    The objective is maximised as log(theta lam - Lambda(theta)) in x = log theta,
    so the scan is scale-free; the objective is positive exactly for x < U.
    """
    _check_ab(ab)
    if lam < 0:
        raise ValueError("rate function domain is [0, inf)")
    if lam == 0:
        return 0.0
    q = 1.0 / (1.0 - ab)
    log_ratio = math.log(E1) - math.log(lam)
    U = -log_ratio / (q - 1.0)

    def h(x):
        z = np.exp((q - 1.0) * x + log_ratio)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(z < 1.0, x + math.log(lam) + np.log1p(-np.minimum(z, 1.0)), -np.inf)

    grid = np.linspace(U - 200.0, U, grid_points)
    k = int(np.argmax(h(grid)))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = optimize.minimize_scalar(lambda x: -float(h(x)), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12, "maxiter": 500})
    return math.exp(-float(res.fun))


def moment_tail_bridge(a, p):
    """Tail constant -p exp(-a/p) from the moment growth rate a at order p."""
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    return -p * math.exp(-a / p)


def c_h_bounds_constant(H):
    """c_H = sqrt(2H) 2^H / sqrt(B(1-H, H+1/2))."""
    if not 0.0 < H < 1.0:
        raise ValueError(f"H must lie in (0, 1), got {H}")
    return math.sqrt(2 * H) * 2**H / math.sqrt(beta_fn(1 - H, H + 0.5))


def chd_bounds(H, d=1):
    """Lower and upper bounds for the fBm local-time tail constant C(H, d)."""
    if not 0.0 < H < 1.0:
        raise ValueError(f"H must lie in (0, 1), got {H}")
    if not H * d < 1.0:
        raise ValueError(f"need H*d < 1, got H={H}, d={d}")
    cH = c_h_bounds_constant(H)
    lphi = log_phi_fn(H * d)
    lo = math.exp(math.log(math.pi * cH**2 / H) / (2 * H) + lphi)
    hi = math.exp(math.log(2 * math.pi) / (2 * H) + lphi)
    return lo, hi


def e1_from_chd(C, H, d=1):
    """E1(delta, H, d) = C^(-Hd/(1-Hd)) [(Hd)^(Hd/(1-Hd)) - (Hd)^(1/(1-Hd))]."""
    x = H * d
    if not 0.0 < x < 1.0:
        raise ValueError(f"need 0 < H*d < 1, got {x}")
    if not C > 0:
        raise ValueError("C must be positive")
    r = x / (1 - x)
    return C ** (-r) * (x**r - x ** (1 / (1 - x)))


def bifbm_prefactors(H, K, beta):
    """Powers of 2 multiplying E1(gamma, HK, beta) and C(gamma, HK, beta) for bi-fBm."""
    ab = H * K * beta
    _check_ab(ab)
    if not 0.0 < K <= 1.0:
        raise ValueError(f"K must lie in (0, 1], got {K}")
    mgf = 2.0 ** (-(1 - K) * beta / (2 * (1 - ab)))
    tail = 2.0 ** ((1 - K) * beta / (2 * ab))
    return mgf, tail


def bifbm_critical_prefactor(H, K, beta, p=None):
    """2^(p (1-K) beta / 2): scales the critical lambda of bi-fBm against C(gamma, HK, beta).

    At the critical order p = 1/(HK beta) this equals the tail prefactor.
    """
    ab = H * K * beta
    _check_ab(ab)
    if not 0.0 < K <= 1.0:
        raise ValueError(f"K must lie in (0, 1], got {K}")
    p = 1.0 / ab if p is None else p
    return 2.0 ** (p * (1 - K) * beta / 2)


def integrability_classify(p, lam, constants: RateConstants, rtol=1e-12):
    """Is E exp(lam * F^p) finite, given the tail law log P(F >= x) ~ -C x^(1/ab)?"""
    if not (p > 0 and lam > 0):
        raise ValueError("p and lambda must be positive")
    pc = constants.critical_p
    if p < pc * (1 - rtol):
        return "finite"
    if p > pc * (1 + rtol):
        return "infinite"
    if constants.provenance == "closed-form" and constants.C is not None:
        lo = hi = constants.C
    elif constants.bounds is not None:
        lo, hi = constants.bounds
    elif constants.ci is not None:
        lo, hi = constants.ci
    else:
        return "unknown"
    if lam < lo:
        return "critical-finite"
    if lam > hi:
        return "critical-infinite"
    return "unknown"


def mgf_growth_bound(b, p, halve=False):
    """Upper bound B^(-1/(p-1)) for limsup rho^(-p/(p-1)) log E e^(rho Y).

    With ``halve`` the conservative choice B = b/2 is used; b = inf gives 0
    since B may then be taken arbitrarily large.
    """
    if not p > 1:
        raise ValueError(f"p must exceed 1, got {p}")
    if not b > 0:
        raise ValueError(f"b must be positive, got {b}")
    if math.isinf(b):
        return 0.0
    B = b / 2 if halve else b
    return B ** (-1.0 / (p - 1))

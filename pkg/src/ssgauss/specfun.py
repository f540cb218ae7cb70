"""Special functions and scalar constants shared by the other modules.

Gamma and Beta are thin domain-checked wrappers over :mod:`scipy.special`.
The Gauss hypergeometric function is evaluated by its own series with the
Pfaff and ``1 - z`` connection transforms, which covers the ``z <= 0`` region
the Molchan-Golosov kernel needs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

__all__ = [
    "QuadratureSettings",
    "gamma_fn",
    "log_gamma_fn",
    "beta_fn",
    "gauss_2f1",
    "alpha_h",
    "phi_fn",
    "log_phi_fn",
]


@dataclass(frozen=True)
class QuadratureSettings:
    rtol: float = 1e-12
    atol: float = 1e-14
    max_subdivisions: int = 200
    # "analytic" maps the half-line tail onto (0, 1]; "truncate" cuts at tail_length
    tail_policy: str = "analytic"
    tail_length: float = 1e4

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")
        if self.tail_policy not in ("analytic", "truncate"):
            raise ValueError(f"unknown tail policy {self.tail_policy!r}")


DEFAULT_QUAD = QuadratureSettings()


def _check_positive(name, x):
    if not np.all(np.asarray(x) > 0):
        raise ValueError(f"{name} must be positive, got {x!r}")


def gamma_fn(x):
    """Gamma function for positive real arguments."""
    _check_positive("x", x)
    return special.gamma(x)


def log_gamma_fn(x):
    _check_positive("x", x)
    return special.gammaln(x)


def beta_fn(a, b):
    """B(a, b) = Gamma(a) Gamma(b) / Gamma(a + b); symmetric by construction."""
    _check_positive("a", a)
    _check_positive("b", b)
    # sort the pair so beta_fn(a, b) and beta_fn(b, a) take the same path
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    return np.exp(special.gammaln(lo) + special.gammaln(hi) - special.gammaln(lo + hi))


class HypergeometricError(ArithmeticError):
    pass


def _is_nonpos_int(c):
    return c <= 0 and float(c).is_integer()


def _f21_series(a, b, c, z, tol=1e-17, max_terms=20000):
    # a <-> b symmetric term recursion: keep the product order fixed
    a, b = min(a, b), max(a, b)
    term = 1.0
    total = 1.0
    for n in range(max_terms):
        term *= (a + n) * (b + n) / ((c + n) * (n + 1)) * z
        total += term
        if term == 0.0 or abs(term) <= tol * abs(total):
            if n > 2:
                return total
    raise HypergeometricError(
        f"2F1 series did not converge: a={a}, b={b}, c={c}, z={z}, "
        f"last term {term:.3e}, partial sum {total:.3e}"
    )


def _f21_unit(a, b, c, w):
    """2F1 on 0 <= w < 1."""
    if w <= 0.75:
        return _f21_series(a, b, c, w)
    s = c - a - b
    if abs(s - round(s)) < 1e-6:
        # connection formula degenerates; slow but convergent for w < 1
        return _f21_series(a, b, c, w, max_terms=2_000_000)
    v = 1.0 - w
    first = 0.0
    if not (_is_nonpos_int(c - a) or _is_nonpos_int(c - b)):
        g1 = math.exp(special.gammaln(c) + special.gammaln(s)
                      - special.gammaln(c - a) - special.gammaln(c - b))
        g1 *= special.gammasgn(c) * special.gammasgn(s) * special.gammasgn(c - a) * special.gammasgn(c - b)
        first = g1 * _f21_series(a, b, 1.0 - s, v)
    second = 0.0
    if not (_is_nonpos_int(a) or _is_nonpos_int(b)):
        g2 = math.exp(special.gammaln(c) + special.gammaln(-s)
                      - special.gammaln(a) - special.gammaln(b))
        g2 *= special.gammasgn(c) * special.gammasgn(-s) * special.gammasgn(a) * special.gammasgn(b)
        second = g2 * v**s * _f21_series(c - a, c - b, 1.0 + s, v)
    return first + second


def gauss_2f1(a, b, c, z, transform="pfaff"):
    """Gauss hypergeometric function F(a, b; c; z) for real z < 1.

    Negative ``z`` is mapped into [0, 1) with a Pfaff transformation, pulling
    out the ``(1 - z)^(-a)`` factor (``transform="pfaff"``) or the
    ``(1 - z)^(-b)`` factor (``transform="pfaff_b"``). Both routes are exact
    so they serve as cross-checks of each other. Arguments close to 1 use the
    ``1 - z`` connection formula.
    """
    a, b, c, z = float(a), float(b), float(c), float(z)
    if _is_nonpos_int(c):
        raise ValueError(f"c must not be a non-positive integer, got {c}")
    if not z < 1.0:
        raise ValueError(f"z must be < 1, got {z}")
    if z == 0.0 or a == 0.0 or b == 0.0:
        return 1.0
    if 0.0 <= z:
        return _f21_unit(a, b, c, z)
    w = z / (z - 1.0)
    if transform == "pfaff":
        return (1.0 - z) ** (-a) * _f21_unit(a, c - b, c, w)
    if transform == "pfaff_b":
        return (1.0 - z) ** (-b) * _f21_unit(c - a, b, c, w)
    if transform == "series":
        if z <= -1.0:
            raise HypergeometricError(f"direct series diverges at z={z}")
        return _f21_series(a, b, c, z)
    raise ValueError(f"unknown transform {transform!r}")


def _mvn_tail_integral(h, quad=DEFAULT_QUAD):
    """int_0^inf [(1+s)^(h-1/2) - s^(h-1/2)]^2 ds by quadrature."""
    a = h - 0.5
    if a == 0.0:
        return 0.0
    kw = dict(epsabs=quad.atol, epsrel=quad.rtol, limit=quad.max_subdivisions)
    # [0, 1]: expand the square, each piece carries an explicit algebraic weight
    head = 1.0 / (2 * a + 1)
    head -= 2.0 * integrate.quad(lambda s: (1 + s) ** a, 0.0, 1.0, weight="alg", wvar=(a, 0.0), **kw)[0]
    head += (2.0 ** (2 * a + 1) - 1.0) / (2 * a + 1)
    if quad.tail_policy == "analytic":
        # s = 1/x sends [1, inf) to (0, 1]; integrand becomes x^(-2a) * smooth
        def smooth(x):
            if x == 0.0:
                return a * a
            return (math.expm1(a * math.log1p(x)) / x) ** 2
        tail = integrate.quad(smooth, 0.0, 1.0, weight="alg", wvar=(-2 * a, 0.0), **kw)[0]
    else:
        f = lambda s: ((1 + s) ** a - s**a) ** 2
        S = quad.tail_length
        tail = integrate.quad(f, 1.0, S, **kw)[0]
        # leading power-law remainder (h - 1/2)^2 s^(2h - 3) beyond S
        tail += a * a * S ** (2 * h - 2) / (2 - 2 * h)
    return head + tail


def alpha_h(H, quad=DEFAULT_QUAD):
    """Mandelbrot-Van Ness normalisation of fBm against the Riemann-Liouville part.

    Returns sqrt(int_0^inf [(1+s)^(H-1/2) - s^(H-1/2)]^2 ds + 1/(2H)).
    """
    if not 0.0 < H < 1.0:
        raise ValueError(f"H must lie in (0, 1), got {H}")
    return math.sqrt(_mvn_tail_integral(H, quad) + 1.0 / (2.0 * H))


def log_phi_fn(x):
    if not 0.0 < x < 1.0:
        raise ValueError(f"phi is defined on (0, 1), got {x}")
    return math.log(x) + (1.0 - x) / x * math.log1p(-x) - special.gammaln(1.0 - x) / x


def phi_fn(x, log_domain=True):
    """phi(x) = x (1-x)^((1-x)/x) / Gamma(1-x)^(1/x)."""
    if log_domain:
        return math.exp(log_phi_fn(x))
    if not 0.0 < x < 1.0:
        raise ValueError(f"phi is defined on (0, 1), got {x}")
    return x * (1.0 - x) ** ((1.0 - x) / x) / special.gamma(1.0 - x) ** (1.0 / x)

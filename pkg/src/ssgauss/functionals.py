"""Occupation-type functionals int_0^T gamma(X_s) ds on sampled paths.

Three gamma families are supported: the Dirac delta (local time at 0, through
heat-kernel mollification and extrapolation in the mollifier width), the
Riesz potential |x|^(-beta) and the product kernel prod |x_i|^(-beta_i).

The first grid cell [0, t_1] is never sampled. Its contribution is replaced
by the expected value under the process's own small-time variance
Var(X_s) = v_1 (s / t_1)^(2 alpha_ss).
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .covariance import ProcessSpec
from .sampler import PathBatch, PathStream, derive_seed, uniform_grid

__all__ = [
    "FunctionalSpec",
    "FunctionalSample",
    "IntegrabilityError",
    "eps_floor",
    "default_eps_schedule",
    "mollified_local_time",
    "local_time_extrapolate",
    "riesz_functional",
    "product_functional",
    "evaluate",
    "simulate_functional",
    "scaling_check",
]

EPS_FLOOR_FACTOR = 4.0


class IntegrabilityError(ValueError):
    """alpha_ss * effective beta >= 1: the functional is not integrable."""


@dataclass(frozen=True)
class FunctionalSpec:
    kind: str  # "delta" | "riesz" | "product"
    beta: float | None = None
    betas: tuple | None = None
    eps_schedule: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("delta", "riesz", "product"):
            raise ValueError(f"kind: unknown functional {self.kind!r}")
        if self.kind == "riesz" and (self.beta is None or not self.beta > 0):
            raise ValueError(f"beta: Riesz exponent must be positive, got {self.beta!r}")
        if self.kind == "product":
            if not self.betas or any(not 0.0 < b < 1.0 for b in self.betas):
                raise ValueError(f"betas: product exponents must lie in (0, 1), got {self.betas!r}")
            object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.eps_schedule is not None:
            eps = tuple(float(e) for e in self.eps_schedule)
            if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
                raise ValueError("eps_schedule must be positive and strictly decreasing")
            object.__setattr__(self, "eps_schedule", eps)

    def effective_beta(self, d: int) -> float:
        if self.kind == "delta":
            return float(d)
        if self.kind == "riesz":
            return float(self.beta)
        return float(sum(self.betas))

    def validate(self, spec: ProcessSpec) -> float:
        """Check the pairing with a process; returns alpha_ss * effective beta."""
        d = spec.d
        if self.kind == "riesz" and not self.beta < d:
            raise ValueError(f"beta: Riesz exponent must lie in (0, d={d}), got {self.beta}")
        if self.kind == "product" and len(self.betas) != d:
            raise ValueError(f"betas: need one exponent per coordinate (d={d}), got {len(self.betas)}")
        ab = spec.self_similarity * self.effective_beta(d)
        if not ab < 1.0:
            raise IntegrabilityError(
                f"alpha_ss * beta = {ab:.4g} >= 1: the functional int gamma(X_s) ds is not "
                "integrable (need alpha_ss * beta < 1, with beta = d for the delta function)"
            )
        return ab

    def to_dict(self):
        return {"kind": self.kind, "beta": self.beta, "betas": list(self.betas) if self.betas else None,
                "eps_schedule": list(self.eps_schedule) if self.eps_schedule else None}

    @classmethod
    def from_dict(cls, data):
        return cls(data["kind"], data.get("beta"), tuple(data["betas"]) if data.get("betas") else None,
                   tuple(data["eps_schedule"]) if data.get("eps_schedule") else None)


@dataclass
class FunctionalSample:
    """Per-path functional values; ``levels`` holds per-eps values for the delta kind."""

    values: np.ndarray
    n: int
    T: float
    levels: np.ndarray | None = None
    eps: tuple | None = None
    errors: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.levels is None:
                w.writerow(["path_id", "value"])
                for i, v in enumerate(self.values):
                    w.writerow([i, repr(float(v))])
            else:
                w.writerow(["path_id", "epsilon", "value"])
                for i in range(self.values.size):
                    for e, v in zip(self.eps, self.levels[i]):
                        w.writerow([i, repr(float(e)), repr(float(v))])
                    w.writerow([i, "0", repr(float(self.values[i]))])

    def write_sidecar(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.diagnostics, fh, indent=2, sort_keys=True)


def eps_floor(spec: ProcessSpec, n: int, T: float = 1.0) -> float:
    """Smallest resolvable mollifier variance: c * (grid variance scale at one step)."""
    return EPS_FLOOR_FACTOR * spec.variance_scale() * (T / n) ** (2 * spec.self_similarity)


def default_eps_schedule(spec: ProcessSpec, n: int, T: float = 1.0, levels: int = 4) -> tuple:
    e0 = eps_floor(spec, n, T)
    return tuple(e0 * 4.0 ** (levels - 1 - k) for k in range(levels))


def _trapezoid(vals, dt):
    # vals (..., n) sampled at t_1..t_n
    return dt * (vals.sum(axis=-1) - 0.5 * (vals[..., 0] + vals[..., -1]))


def _gl_nodes(k=64):
    x, w = np.polynomial.legendre.leggauss(k)
    return 0.5 * (x + 1.0), 0.5 * w


def _first_cell_heat(spec, t1, eps):
    """int_0^{t_1} E p_eps(X_s) ds = int_0^{t_1} (2 pi (eps + Var X_s))^(-d/2) ds."""
    u, w = _gl_nodes()
    v = spec.variance(t1 * u)
    return t1 * float(np.sum(w * (2 * np.pi * (eps + v)) ** (-spec.d / 2)))


def _abs_moment(d, beta):
    """E |N(0, I_d)|^(-beta) for beta < d."""
    return 2.0 ** (-beta / 2) * math.exp(special.gammaln((d - beta) / 2) - special.gammaln(d / 2))


def _first_cell_power(spec, t1, betas):
    # sum(betas) is the homogeneity degree; each factor uses a 1-d moment
    ab = spec.self_similarity * sum(betas)
    v1 = spec.variance(t1)
    return t1 * v1 ** (-sum(betas) / 2) / (1.0 - ab), ab


def _paths_grid(batch_or_paths, grid=None):
    if isinstance(batch_or_paths, PathBatch):
        return batch_or_paths.paths, batch_or_paths.grid, batch_or_paths.spec
    return batch_or_paths, grid, None


def mollified_local_time(batch: PathBatch, eps, *, _grid=None, _spec=None):
    """int_0^T p_eps(X_t) dt per path, p_eps the heat kernel of variance eps.

    ``eps`` may be a scalar or a sequence; the result has shape (N,) or (N, len(eps)).
    """
    paths, grid, spec = _paths_grid(batch, _grid)
    spec = spec or _spec
    scalar = np.ndim(eps) == 0
    eps_arr = np.atleast_1d(np.asarray(eps, dtype=float))
    if np.any(eps_arr <= 0):
        raise ValueError("eps must be positive")
    d = paths.shape[2]
    dt = grid[1] - grid[0] if grid.size > 1 else grid[0]
    r2 = np.einsum("ijk,ijk->ij", paths, paths)
    out = np.empty((paths.shape[0], eps_arr.size))
    for k, e in enumerate(eps_arr):
        dens = np.exp(-r2 / (2 * e)) * (2 * np.pi * e) ** (-d / 2)
        out[:, k] = _trapezoid(dens, dt) + _first_cell_heat(spec, grid[0], e)
    return out[:, 0] if scalar else out


def local_time_extrapolate(levels, eps, noise_tol=None):
    """Richardson extrapolation of per-eps values to eps -> 0.

    ``levels`` is (N, L) or (L,) with eps decreasing geometrically (L >= 3).
    The local order rho is fitted on batch means from the last three levels,
    then the last two levels are combined per path. Returns
    ``(limit, error_bar, info)`` with error bar = |limit - smallest-eps value|.
    If the mean sequence is not monotone beyond noise the smallest-eps value is
    returned with an error bar inflated to the full spread of the levels.
    """
    v = np.atleast_2d(np.asarray(levels, dtype=float))
    squeeze = np.ndim(levels) == 1
    eps = np.asarray(eps, dtype=float)
    if v.shape[1] < 3 or eps.size != v.shape[1]:
        raise ValueError("need at least three eps levels, one per column")
    ratios = eps[1:] / eps[:-1]
    if not np.allclose(ratios, ratios[0], rtol=1e-9):
        raise ValueError("eps levels must form a geometric progression")
    q = ratios[0]
    means = v.mean(axis=0)
    d1 = means[-2] - means[-3]
    d2 = means[-1] - means[-2]
    if noise_tol is None:
        if v.shape[0] > 1:
            diffs = np.diff(v, axis=1)
            noise_tol = 2.0 * float(diffs[:, -1].std(ddof=1)) / math.sqrt(v.shape[0])
        else:
            noise_tol = 0.0
    info = {"q": float(q), "mean_levels": [float(x) for x in means]}
    if d1 == 0.0 and d2 == 0.0:
        info.update(rho=None, fallback=False)
        out = v[:, -1].copy()
        err = np.zeros_like(out)
    elif d1 * d2 > 0 and abs(d2) < abs(d1):
        rho = float(np.clip(math.log(d2 / d1) / math.log(q), 0.05, 4.0))
        g = q**rho / (1.0 - q**rho)
        out = v[:, -1] + g * (v[:, -1] - v[:, -2])
        err = np.abs(out - v[:, -1])
        info.update(rho=rho, fallback=False)
    elif abs(d2) <= noise_tol:
        # already converged within noise
        out = v[:, -1].copy()
        err = np.abs(v[:, -1] - v[:, -2])
        info.update(rho=None, fallback=False)
    else:
        out = v[:, -1].copy()
        err = np.max(v, axis=1) - np.min(v, axis=1)
        info.update(rho=None, fallback=True)
    if squeeze:
        return float(out[0]), float(err[0]), info
    return out, err, info


def _power_integrand(paths, betas):
    """prod_i |x_i|^(-beta_i) (product) or |x|^(-beta) (betas scalar); zeros repaired."""
    if np.ndim(betas) == 0:
        r = np.sqrt(np.einsum("ijk,ijk->ij", paths, paths))
        zero = r == 0.0
        with np.errstate(divide="ignore"):
            vals = r ** (-float(betas))
    else:
        a = np.abs(paths)
        zero = np.any(a == 0.0, axis=2)
        with np.errstate(divide="ignore"):
            vals = np.prod(a ** (-np.asarray(betas))[None, None, :], axis=2)
    nzero = int(zero.sum())
    if nzero:
        # exact zeros: average of the neighbouring cells
        vals = vals.copy()
        for i, j in zip(*np.nonzero(zero)):
            nb = [vals[i, k] for k in (j - 1, j + 1) if 0 <= k < vals.shape[1] and np.isfinite(vals[i, k])]
            vals[i, j] = np.mean(nb) if nb else 0.0
    return vals, nzero


def _power_functional(paths, grid, spec, betas, first_cell_const):
    vals, nzero = _power_integrand(paths, betas)
    dt = grid[1] - grid[0]
    full = _trapezoid(vals, dt)
    first, _ = _first_cell_power(spec, grid[0], np.atleast_1d(betas))
    first *= first_cell_const
    total = full + first
    # discretisation estimate: trapezoid on every other point, same span
    if vals.shape[1] >= 3 and (vals.shape[1] - 1) % 2 == 0:
        coarse = _trapezoid(vals[:, ::2], 2 * dt)
        disc = np.abs(full - coarse)
    else:
        coarse = _trapezoid(vals[:, 1::2], 2 * dt)
        span_fix = _trapezoid(vals[:, :2], dt)
        disc = np.abs(full - (coarse + span_fix))
    return total, disc, nzero


def riesz_functional(batch: PathBatch, beta: float, *, _grid=None, _spec=None):
    """int_0^T |X_t|^(-beta) dt per path; returns (values, discretisation error estimate, zero count)."""
    paths, grid, spec = _paths_grid(batch, _grid)
    spec = spec or _spec
    d = paths.shape[2]
    if not 0.0 < beta < d:
        raise ValueError(f"Riesz exponent must lie in (0, d={d}), got {beta}")
    if not spec.self_similarity * beta < 1.0:
        raise IntegrabilityError(f"alpha_ss * beta = {spec.self_similarity * beta:.4g} >= 1")
    return _power_functional(paths, grid, spec, float(beta), _abs_moment(d, beta))


def product_functional(batch: PathBatch, betas, *, _grid=None, _spec=None):
    """int_0^T prod_i |X^i_t|^(-beta_i) dt per path."""
    paths, grid, spec = _paths_grid(batch, _grid)
    spec = spec or _spec
    betas = np.asarray(betas, dtype=float)
    if betas.size != paths.shape[2]:
        raise ValueError("need one exponent per coordinate")
    if np.any((betas <= 0) | (betas >= 1)):
        raise ValueError("product exponents must lie in (0, 1)")
    if not spec.self_similarity * betas.sum() < 1.0:
        raise IntegrabilityError(f"alpha_ss * sum(beta) = {spec.self_similarity * betas.sum():.4g} >= 1")
    const = float(np.prod([_abs_moment(1, b) for b in betas]))
    return _power_functional(paths, grid, spec, betas, const)


def _eval_block(paths, grid, spec, fspec, eps):
    if fspec.kind == "delta":
        return mollified_local_time(paths, eps, _grid=grid, _spec=spec)
    if fspec.kind == "riesz":
        v, disc, nz = riesz_functional(paths, fspec.beta, _grid=grid, _spec=spec)
    else:
        v, disc, nz = product_functional(paths, fspec.betas, _grid=grid, _spec=spec)
    return np.column_stack([v, disc, np.full(v.size, nz, dtype=float)])


def evaluate(batch: PathBatch, fspec: FunctionalSpec) -> FunctionalSample:
    """Evaluate a functional on an in-memory batch."""
    fspec.validate(batch.spec)
    eps = _schedule(fspec, batch.spec, batch.n, batch.T)
    raw = _eval_block(batch.paths, batch.grid, batch.spec, fspec, eps)
    return _finish(raw, fspec, batch.spec, batch.n, batch.T, eps)


def _schedule(fspec, spec, n, T):
    if fspec.kind != "delta":
        return None
    return fspec.eps_schedule or default_eps_schedule(spec, n, T)


def _finish(raw, fspec, spec, n, T, eps):
    diag = {"process": spec.to_dict(), "functional": fspec.to_dict(), "n": int(n), "T": float(T),
            "N": int(raw.shape[0])}
    if fspec.kind == "delta":
        floor = eps_floor(spec, n, T)
        diag["eps"] = list(eps)
        diag["eps_floor"] = floor
        if min(eps) < floor * (1 - 1e-12):
            diag["warning"] = f"eps {min(eps):.3g} below grid resolution floor {floor:.3g}"
            warnings.warn(diag["warning"], RuntimeWarning, stacklevel=3)
        if len(eps) >= 3:
            lim, err, info = local_time_extrapolate(raw, eps)
        else:
            lim, err, info = raw[:, -1].copy(), np.zeros(raw.shape[0]), {"rho": None}
        diag["extrapolation"] = info
        diag["max_value"] = float(lim.max())
        return FunctionalSample(lim, n, T, levels=raw, eps=tuple(eps), errors=err, diagnostics=diag)
    vals, disc, nz = raw[:, 0], raw[:, 1], raw[:, 2]
    diag["zero_cells"] = int(nz.sum())
    diag["max_value"] = float(vals.max())
    diag["mean_discretisation_error"] = float(disc.mean())
    return FunctionalSample(vals, n, T, errors=disc, diagnostics=diag)


def simulate_functional(spec: ProcessSpec, fspec: FunctionalSpec, n: int, T: float, N: int,
                        seed: int, method: str | None = None, threads=None) -> FunctionalSample:
    """Sample paths block by block and evaluate the functional without storing paths."""
    fspec.validate(spec)
    stream = PathStream(spec, uniform_grid(n, T), N, seed, method)
    eps = _schedule(fspec, spec, n, T)

    def per_block(nz_paths):
        return _eval_block(nz_paths, stream.grid, spec, fspec, eps)

    raw = stream.map(per_block, threads)
    fs = _finish(raw, fspec, spec, n, T, eps)
    fs.diagnostics.update(seed=int(seed), method=stream.method)
    return fs


def scaling_check(spec: ProcessSpec, fspec: FunctionalSpec, a: float, N: int, seed: int,
                  n: int = 1024, method: str | None = None, threads=None):
    """KS test of L_a =d a^(1 - alpha_ss beta) L_1 with independent samples."""
    if not a > 0:
        raise ValueError(f"scale factor must be positive, got {a}")
    ab = fspec.validate(spec)
    l1 = simulate_functional(spec, fspec, n, 1.0, N, derive_seed(seed, 1), method, threads)
    la = simulate_functional(spec, fspec, n, float(a), N, derive_seed(seed, 2), method, threads)
    res = stats.ks_2samp(a ** (1.0 - ab) * l1.values, la.values, method="asymp")
    return float(res.statistic), float(res.pvalue)

"""Gaussian path generation on uniform grids with reproducible seeding.

Paths are produced in fixed-size blocks. Block ``b`` draws from its own
``PCG64`` stream keyed by ``SeedSequence(seed, spawn_key=(b,))``, so a batch is
a pure function of ``(seed, spec, grid, method, N)`` whatever the number of
worker threads.
"""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .covariance import ProcessSpec, build_cov_matrix
from .specfun import gamma_fn

log = logging.getLogger(__name__)

BLOCK = 256
METHODS = ("increments", "cholesky", "circulant", "rl-kernel", "decomposed")


def resolve_threads(threads=None) -> int:
    if threads is None:
        threads = os.environ.get("SSGAUSS_THREADS", 1)
    threads = int(threads)
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return threads


def block_rng(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(block)))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """Independent child seed for a sub-experiment (e.g. the second arm of a KS test)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0])


def uniform_grid(n: int, T: float = 1.0) -> np.ndarray:
    if n < 2:
        raise ValueError(f"grid needs n >= 2 points, got {n}")
    if not T > 0:
        raise ValueError(f"horizon T must be positive, got {T}")
    return T * np.arange(1, n + 1, dtype=float) / n


@dataclass
class PathBatch:
    """N sampled d-dimensional paths on grid (the origin is implicit, X_0 = 0)."""

    spec: ProcessSpec
    grid: np.ndarray
    paths: np.ndarray  # (N, n, d)
    seed: int
    method: str
    jitter: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.paths.shape[0]

    @property
    def n(self) -> int:
        return self.grid.size

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    def header(self) -> dict:
        return {
            "format": "ssgauss-pathbatch/1",
            "version": __version__,
            "spec": self.spec.to_dict(),
            "n": int(self.n),
            "T": self.T,
            "N": int(self.N),
            "seed": int(self.seed),
            "method": self.method,
            "jitter": float(self.jitter),
            "dtype": "<f8",
            "shape": [int(x) for x in self.paths.shape],
            **({"meta": self.meta} if self.meta else {}),
        }

    def write(self, path) -> None:
        """JSON header line followed by the raw little-endian float64 array."""
        with open(path, "wb") as fh:
            fh.write(json.dumps(self.header(), sort_keys=True).encode() + b"\n")
            fh.write(np.ascontiguousarray(self.paths, dtype="<f8").tobytes())

    @classmethod
    def read(cls, path) -> "PathBatch":
        with open(path, "rb") as fh:
            head = json.loads(fh.readline())
            raw = fh.read()
        if head.get("format") != "ssgauss-pathbatch/1":
            raise ValueError(f"{path}: not a path batch file")
        paths = np.frombuffer(raw, dtype="<f8").reshape(head["shape"]).copy()
        spec = ProcessSpec.from_dict(head["spec"])
        return cls(spec, uniform_grid(head["n"], head["T"]), paths, head["seed"],
                   head["method"], head.get("jitter", 0.0), head.get("meta", {}))


class SamplingError(np.linalg.LinAlgError):
    pass


def cholesky_factor(spec: ProcessSpec, grid, max_jitter=1e-8):
    """Lower Cholesky factor of the grid covariance, with reported jitter on failure."""
    cm = build_cov_matrix(spec, grid)
    mat = cm.matrix
    scale = float(np.max(np.diag(mat)))
    jitter = 0.0
    while True:
        try:
            L = np.linalg.cholesky(mat + jitter * scale * np.eye(mat.shape[0]))
            break
        except np.linalg.LinAlgError:
            jitter = 1e-14 if jitter == 0.0 else jitter * 10
            if jitter > max_jitter:
                raise SamplingError(
                    "Cholesky factorisation failed even with relative jitter "
                    f"{max_jitter:g}; coarsen the grid or raise max_jitter"
                ) from None
    if jitter:
        log.warning("cholesky: added relative diagonal jitter %.1e", jitter)
    return L, jitter


def fgn_eigenvalues(H: float, n: int):
    """Circulant embedding eigenvalues for unit-step fractional Gaussian noise."""
    k = np.arange(n + 1, dtype=float)
    c = 0.5 * (np.abs(k + 1) ** (2 * H) + np.abs(k - 1) ** (2 * H) - 2 * k ** (2 * H))
    row = np.concatenate([c, c[-2:0:-1]])
    lam = np.fft.fft(row).real
    lo = lam.min()
    clipped = 0
    if lo < 0:
        if lo < -1e-8 * lam.max():
            raise SamplingError(f"circulant embedding has eigenvalue {lo:.3e}")
        clipped = int(np.sum(lam < 0))
        lam = np.clip(lam, 0.0, None)
    return lam, clipped


def rl_weights(alpha: float, n: int, dt: float) -> np.ndarray:
    """Lag weights so that sum_k w_k^2 dt reproduces int (t_j - s)^(2 alpha - 1) ds cell by cell."""
    k = np.arange(n, dtype=float)
    cell = dt ** (2 * alpha) * ((k + 1) ** (2 * alpha) - k ** (2 * alpha)) / (2 * alpha)
    return np.sqrt(cell / dt)


class _Plan:
    """Precomputed per-method state; ``draw`` fills one block of paths."""

    def __init__(self, spec: ProcessSpec, grid, method: str):
        self.spec = spec
        self.grid = np.asarray(grid, dtype=float)
        self.method = method
        self.jitter = 0.0
        self.meta = {}
        n = self.grid.size
        dt = self.grid[0]
        uniform = np.allclose(np.diff(self.grid), dt, rtol=1e-12, atol=0) if n > 1 else True
        if method in ("increments", "circulant", "rl-kernel") and not uniform:
            raise ValueError(f"method {method!r} needs a uniform grid starting at T/n")
        if method == "increments":
            if spec.self_similarity != 0.5 or spec.kind not in ("bm", "fbm", "subfbm", "rl"):
                raise ValueError("increments method only samples Brownian motion")
            if spec.kind in ("fbm", "subfbm") and spec.H != 0.5:
                raise ValueError("increments method only samples Brownian motion")
            self.dt = dt
        elif method == "cholesky":
            self.L, self.jitter = cholesky_factor(spec, self.grid)
        elif method == "circulant":
            if spec.kind not in ("fbm", "bm"):
                raise ValueError("circulant method samples fBm only")
            if n & (n - 1):
                raise ValueError(f"circulant method needs n a power of two, got {n}")
            H = spec.H if spec.kind == "fbm" else 0.5
            lam, clipped = fgn_eigenvalues(H, n)
            self.sqrt_lam = np.sqrt(lam / (2 * n))
            self.scale = dt**H
            self.meta["clipped_eigenvalues"] = clipped
        elif method == "rl-kernel":
            if spec.kind not in ("rl", "bm"):
                raise ValueError("rl-kernel method samples the Riemann-Liouville process")
            alpha = spec.alpha if spec.kind == "rl" else 0.5
            self.alpha = alpha
            self.dt = dt
            if alpha != 0.5:
                w = rl_weights(alpha, n, dt)
                self.nfft = 2 * n
                self.w_hat = np.fft.rfft(w, self.nfft)
        elif method == "decomposed":
            if spec.kind != "subfbm" or not 0.0 < spec.H < 0.5:
                raise ValueError("decomposed method samples sub-fBm with H in (0, 1/2)")
            H = spec.H
            self.L_fbm, j1 = cholesky_factor(ProcessSpec("fbm", H=H), self.grid)
            self.L_y, j2 = cholesky_factor(ProcessSpec("auxy", alpha=H), self.grid)
            self.jitter = max(j1, j2)
            self.c = math.sqrt(H * (1 - 2 * H) / gamma_fn(2 - 2 * H))
        else:
            raise ValueError(f"unknown sampler method {method!r}; expected one of {METHODS}")

    def draw(self, rng: np.random.Generator, B: int) -> np.ndarray:
        n, d = self.grid.size, self.spec.d
        m = self.method
        if m == "increments" or (m == "rl-kernel" and self.alpha == 0.5):
            z = rng.standard_normal((B, d, n))
            x = np.cumsum(z, axis=2) * math.sqrt(self.dt)
        elif m == "cholesky":
            z = rng.standard_normal((B, d, n))
            x = z @ self.L.T
        elif m == "circulant":
            # real and imaginary parts are independent fGn samples
            nn = 2 * n
            half = -(-B * d // 2)
            z = rng.standard_normal((half, 2, nn))
            xi = (z[:, 0] + 1j * z[:, 1]) * self.sqrt_lam
            y = np.fft.fft(xi, axis=1)[:, :n]
            fgn = np.concatenate([y.real, y.imag], axis=0)[: B * d].reshape(B, d, n)
            x = np.cumsum(fgn, axis=2) * self.scale
        elif m == "rl-kernel":
            z = rng.standard_normal((B, d, n)) * math.sqrt(self.dt)
            conv = np.fft.irfft(np.fft.rfft(z, self.nfft, axis=2) * self.w_hat, self.nfft, axis=2)
            x = conv[:, :, :n]
        else:  # decomposed
            z1 = rng.standard_normal((B, d, n))
            z2 = rng.standard_normal((B, d, n))
            x = z1 @ self.L_fbm.T + self.c * (z2 @ self.L_y.T)
        return np.ascontiguousarray(np.transpose(x, (0, 2, 1)))


def default_method(spec: ProcessSpec, n: int) -> str:
    if spec.kind == "bm":
        return "increments"
    if spec.kind == "fbm":
        return "circulant" if n & (n - 1) == 0 else "cholesky"
    if spec.kind == "rl":
        return "rl-kernel"
    return "cholesky"


def n_blocks(N: int) -> int:
    return -(-int(N) // BLOCK)


def map_blocks(func, N: int, threads=None):
    """Apply ``func(block_index, block_size)`` to every block, results in block order."""
    sizes = [min(BLOCK, N - b * BLOCK) for b in range(n_blocks(N))]
    threads = resolve_threads(threads)
    if threads == 1 or len(sizes) == 1:
        return [func(b, sz) for b, sz in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, range(len(sizes)), sizes))


class PathStream:
    """Block-wise sampler; blocks can be consumed without materialising the whole batch."""

    def __init__(self, spec: ProcessSpec, grid, N: int, seed: int, method: str | None = None,
                 stream: int = 0):
        if N < 1:
            raise ValueError(f"N must be >= 1, got {N}")
        self.spec = spec
        self.grid = np.asarray(grid, dtype=float)
        self.N = int(N)
        self.seed = int(seed)
        self.method = method or default_method(spec, self.grid.size)
        self.stream = stream
        self.plan = _Plan(spec, self.grid, self.method)

    def block(self, b: int, size: int) -> np.ndarray:
        return self.plan.draw(block_rng(self.seed, b, self.stream), size)

    def map(self, func, threads=None):
        """``func(paths_block) -> array`` evaluated per block; concatenated in path order."""
        out = map_blocks(lambda b, sz: func(self.block(b, sz)), self.N, threads)
        return np.concatenate(out, axis=0)

    def collect(self, threads=None) -> PathBatch:
        paths = self.map(lambda x: x, threads)
        return PathBatch(self.spec, self.grid, paths, self.seed, self.method,
                         self.plan.jitter, dict(self.plan.meta))


def sample(spec: ProcessSpec, n: int, T: float, N: int, seed: int, method: str | None = None,
           threads=None) -> PathBatch:
    return PathStream(spec, uniform_grid(n, T), N, seed, method).collect(threads)


def sample_cholesky(spec: ProcessSpec, grid, N: int, seed: int, threads=None) -> PathBatch:
    """Exact sampling from the grid covariance of ``spec``."""
    return PathStream(spec, grid, N, seed, "cholesky").collect(threads)


def sample_fbm_circulant(H: float, n: int, T: float, N: int, seed: int, d: int = 1,
                         threads=None) -> PathBatch:
    """Exact fBm via circulant embedding of fractional Gaussian noise.

    Falls back to Cholesky (with a logged warning) if the embedding is not
    non-negative definite.
    """
    spec = ProcessSpec("fbm", H=H, d=d)
    try:
        return PathStream(spec, uniform_grid(n, T), N, seed, "circulant").collect(threads)
    except SamplingError as exc:
        log.warning("circulant embedding failed (%s); falling back to Cholesky", exc)
        return sample_cholesky(spec, uniform_grid(n, T), N, seed, threads)


def sample_rl_kernel(alpha: float, n: int, T: float, N: int, seed: int, d: int = 1,
                     threads=None) -> PathBatch:
    """Discretised Riemann-Liouville convolution with cell-averaged kernel weights.

    Var(X_{t_j}) is exact at every grid time; off-diagonal covariances carry
    an O(dt^(2 alpha)) bias concentrated in the cell next to the later time.
    """
    spec = ProcessSpec("rl", alpha=alpha, d=d)
    return PathStream(spec, uniform_grid(n, T), N, seed, "rl-kernel").collect(threads)


def sample_subfbm_decomposed(H: float, grid, N: int, seed: int, d: int = 1, threads=None) -> PathBatch:
    """Sub-fBm as fBm plus sqrt(H(1-2H)/Gamma(2-2H)) times an independent auxiliary process."""
    spec = ProcessSpec("subfbm", H=H, d=d)
    return PathStream(spec, grid, N, seed, "decomposed").collect(threads)

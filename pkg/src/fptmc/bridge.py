"""Exact simulation of the standard 3-d Brownian bridge on a uniform grid,
the path functional I(t) = int_0^1 gamma(|u x e1 + sqrt(t) beta_u|) du, and
the closed-form law of max |beta| used as a simulation oracle.

Sampling is the sequential conditional-Gaussian construction in closed
form: with r_j = (1-u_{j+1})/(1-u_j) and sd_j^2 = (u_{j+1}-u_j) r_j, the
recursion beta_{j+1} = r_j beta_j + sd_j Z_j unrolls to

    beta_k = (1 - u_k) * sum_{j<k} [sd_j / (1-u_{j+1})] Z_j,

which is evaluated with one cumulative sum per path and is exact in
distribution at the grid times. Gaussian variates are inverse-CDF
transforms of centre-of-bin 53-bit uniforms from a per-path PCG64 stream
(method fixed per release for reproducibility).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtri

from . import _kernels
from .errors import EvaluationError, FptmcError
from .expr import Program
from .quadrature import simpson_weights

__all__ = [
    "BridgePath",
    "BridgeEnsemble",
    "splitmix64",
    "path_seed",
    "sample_bridge",
    "generate_ensemble",
    "path_functional_I",
    "functional_matrix",
    "bessel_max_cdf",
    "save_ensemble",
    "load_ensemble",
]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(v: int) -> int:
    v = (v + _GOLDEN) & _MASK64
    v = ((v ^ (v >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    v = ((v ^ (v >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (v ^ (v >> 31)) & _MASK64


def path_seed(base_seed: int, index: int) -> int:
    """Counter-derived per-path seed: splitmix64(base XOR index*golden)."""
    return splitmix64((base_seed ^ ((index * _GOLDEN) & _MASK64)) & _MASK64)


def _normals(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Phi^{-1}((k + 1/2) / 2^53) with k a 53-bit integer draw."""
    k = rng.integers(0, 1 << 53, size=shape, dtype=np.int64)
    return ndtri((k + 0.5) * (2.0 ** -53))


@dataclass(frozen=True)
class BridgePath:
    """One bridge path: uniform grid u_k = k/M and M+1 points in R^3."""

    grid: np.ndarray
    points: np.ndarray
    seed: int


@dataclass(frozen=True)
class BridgeEnsemble:
    """N paths stored as the two per-path profiles the estimator consumes:
    g1[i,k] = u_k beta^(1) and g2[i,k] = |beta|^2, plus each path's grid
    maximum of |beta|. Row i regenerates bit-for-bit from
    path_seed(base_seed, i)."""

    n_paths: int
    m: int
    base_seed: int
    g1: np.ndarray = field(repr=False)
    g2: np.ndarray = field(repr=False)
    max_norm: np.ndarray = field(repr=False)

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.m + 1) / self.m

    @property
    def simpson_w(self) -> np.ndarray:
        return simpson_weights(self.m, 1.0 / self.m)

    def path(self, i: int) -> BridgePath:
        return sample_bridge(self.m, path_seed(self.base_seed, i))

    def squared_norm_integrals(self) -> np.ndarray:
        """Per-path Simpson value of int_0^1 |beta_u|^2 du."""
        return self.g2 @ self.simpson_w

    def weighted_first_coord_integrals(self) -> np.ndarray:
        """Per-path Simpson value of int_0^1 u beta^(1)_u du."""
        return self.g1 @ self.simpson_w


def _bridge_weights(m: int) -> tuple[np.ndarray, np.ndarray]:
    u = np.arange(m + 1) / m
    one_minus = 1.0 - u
    sd = np.sqrt((1.0 / m) * one_minus[1:] / one_minus[:-1])
    w = np.zeros(m)
    w[:-1] = sd[:-1] / one_minus[1:-1]
    # the last step is the deterministic pin to zero; its draw has weight 0
    return one_minus, w


def _paths_from_normals(z: np.ndarray, m: int) -> np.ndarray:
    one_minus, w = _bridge_weights(m)
    scaled = z * w[np.newaxis, :, np.newaxis]
    points = np.zeros((z.shape[0], m + 1, 3))
    np.cumsum(scaled, axis=1, out=points[:, 1:, :])
    points *= one_minus[np.newaxis, :, np.newaxis]
    return points


def sample_bridge(m: int, seed: int) -> BridgePath:
    """One exact bridge path on m+1 grid points from the given seed."""
    if m < 2:
        raise ValueError("grid size M must be at least 2")
    rng = np.random.Generator(np.random.PCG64(seed))
    z = _normals(rng, (m, 3))
    points = _paths_from_normals(z[np.newaxis, :, :], m)[0]
    return BridgePath(grid=np.arange(m + 1) / m, points=points, seed=seed)


def generate_ensemble(
    n_paths: int,
    m: int,
    base_seed: int,
    chunk_size: int = 256,
) -> BridgeEnsemble:
    """N independent paths from counter-derived seeds, reduced to profiles.

    Paths are generated chunk by chunk; the result is independent of
    chunk_size because every path draws only from its own stream.
    """
    if m < 2 or m % 2:
        raise ValueError("ensemble grid size M must be even and >= 2")
    if n_paths < 1:
        raise ValueError("need at least one path")
    u = np.arange(m + 1) / m
    g1 = np.empty((n_paths, m + 1))
    g2 = np.empty((n_paths, m + 1))
    max_norm = np.empty(n_paths)
    for start in range(0, n_paths, chunk_size):
        stop = min(n_paths, start + chunk_size)
        z = np.empty((stop - start, m, 3))
        for i in range(start, stop):
            rng = np.random.Generator(np.random.PCG64(path_seed(base_seed, i)))
            z[i - start] = _normals(rng, (m, 3))
        pts = _paths_from_normals(z, m)
        sq = np.einsum("ikc,ikc->ik", pts, pts)
        g1[start:stop] = u[np.newaxis, :] * pts[:, :, 0]
        g2[start:stop] = sq
        max_norm[start:stop] = np.sqrt(sq.max(axis=1))
    return BridgeEnsemble(n_paths=n_paths, m=m, base_seed=base_seed,
                          g1=g1, g2=g2, max_norm=max_norm)


# ---------------------------------------------------------------------------
# Path functional
# ---------------------------------------------------------------------------

def path_functional_I(path: BridgePath, x: float, t: float, gamma: Callable) -> float:
    """Simpson value of int_0^1 gamma(|u x e1 + sqrt(t) beta_u|) du on one path."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if not x > 0:
        raise ValueError("x must be positive")
    m = len(path.grid) - 1
    if m % 2:
        raise ValueError("path functional needs an even grid (Simpson)")
    shifted = np.sqrt(t) * path.points
    shifted[:, 0] += path.grid * x
    radius = np.sqrt(np.einsum("kc,kc->k", shifted, shifted))
    with np.errstate(all="ignore"):
        vals = np.asarray(gamma(radius), dtype=np.float64)
    if not np.isfinite(vals).all():
        bad = radius[~np.isfinite(vals)][0]
        raise EvaluationError(f"potential evaluation failed at radius {bad:.6g}")
    return float(vals @ simpson_weights(m, 1.0 / m))


_BLOCK_COMPILED = 1024
_BLOCK_NUMPY = 256


def functional_matrix(
    ensemble: BridgeEnsemble,
    x: float,
    t_grid: np.ndarray,
    gamma_program: Program,
    threads: int = 1,
) -> np.ndarray:
    """I[i, j] = path functional of path i at t_grid[j], via the selected
    kernel backend. Parallelism is a deterministic block map: block
    boundaries are fixed, each block writes its own output slice."""
    t_grid = np.ascontiguousarray(t_grid, dtype=np.float64)
    u = ensemble.grid
    u2x2 = np.ascontiguousarray((u * x) ** 2)
    w = np.ascontiguousarray(ensemble.simpson_w)
    out = np.empty((ensemble.n_paths, len(t_grid)))
    block = _BLOCK_COMPILED if _kernels.BACKEND == "compiled" else _BLOCK_NUMPY
    spans = [(s, min(ensemble.n_paths, s + block)) for s in range(0, ensemble.n_paths, block)]

    def run(span):
        s, e = span
        return _kernels.functional_block(
            np.ascontiguousarray(ensemble.g1[s:e]),
            np.ascontiguousarray(ensemble.g2[s:e]),
            u2x2, w, float(x), t_grid, gamma_program, out[s:e],
        )

    if threads > 1 and len(spans) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, spans))
    else:
        results = [run(s) for s in spans]
    for status, bad_radius, bad_t in results:
        if status == 1:
            raise EvaluationError(
                f"potential evaluation failed at radius {bad_radius:.6g} (t={bad_t:.6g})"
            )
        if status:
            raise FptmcError("kernel reported an internal program error")
    return out


# ---------------------------------------------------------------------------
# Law of the bridge maximum (simulation oracle)
# ---------------------------------------------------------------------------

def bessel_max_cdf(y: float, terms: int = 10000) -> float:
    """P[max_{0<=u<=1} |beta_u| <= y] for the standard 3-d Brownian bridge.

    Series form (pi^3 / y^3) sqrt(2/pi) sum_{n>=1} n^2 exp(-pi^2 n^2 / (2 y^2)),
    truncated once the next term falls below 1e-15.
    """
    if not y > 0:
        raise ValueError("y must be positive")
    if terms < 1:
        raise ValueError("need at least one series term")
    pref = (np.pi ** 3 / y ** 3) * np.sqrt(2.0 / np.pi)
    total = 0.0
    for n in range(1, terms + 1):
        term = n * n * np.exp(-np.pi ** 2 * n * n / (2.0 * y * y))
        total += term
        if pref * term < 1e-15 and n >= 3:
            break
    return float(pref * total)


# ---------------------------------------------------------------------------
# Binary ensemble dump (replay across runs)
# ---------------------------------------------------------------------------

_MAGIC = b"FPTENS\x00\x00"
_VERSION = 1


def save_ensemble(ensemble: BridgeEnsemble, path: str) -> None:
    """Header: magic, u32 version, u64 N, u64 M, u64 base_seed; payload:
    g1 rows, g2 rows, max_norm, little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQQQ", _VERSION, ensemble.n_paths, ensemble.m,
                             ensemble.base_seed & _MASK64))
        fh.write(ensemble.g1.astype("<f8").tobytes())
        fh.write(ensemble.g2.astype("<f8").tobytes())
        fh.write(ensemble.max_norm.astype("<f8").tobytes())


def load_ensemble(path: str) -> BridgeEnsemble:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise FptmcError("not an ensemble dump (bad magic)")
        version, n, m, base_seed = struct.unpack("<IQQQ", fh.read(28))
        if version != _VERSION:
            raise FptmcError(f"unsupported ensemble dump version {version}")
        count = n * (m + 1)
        g1 = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(n, m + 1).copy()
        g2 = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(n, m + 1).copy()
        max_norm = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
    return BridgeEnsemble(n_paths=int(n), m=int(m), base_seed=int(base_seed),
                          g1=g1, g2=g2, max_norm=max_norm)

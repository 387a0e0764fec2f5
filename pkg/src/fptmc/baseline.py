"""Conventional Euler-scheme estimator of the first-passage law, with an
optional in-step Brownian-bridge crossing correction, plus a Gaussian
kernel density over the crossing times. This is the comparison baseline
for the direct estimator: it targets the CDF and needs smoothing to yield
a density, with the familiar discretization bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .bridge import _normals, path_seed
from .errors import ConfigError, EvaluationError, FptmcError
from .model import DriftModel

__all__ = ["EulerRun", "KernelDensity", "euler_fpt_sample", "empirical_cdf", "kernel_density"]


@dataclass(frozen=True)
class EulerRun:
    h: float
    horizon: float
    n_paths: int
    bridge_correction: bool
    seed: int
    crossing_times: np.ndarray = field(repr=False)  # +inf marks censored paths

    @property
    def n_censored(self) -> int:
        return int(np.sum(~np.isfinite(self.crossing_times)))

    @property
    def uncensored(self) -> np.ndarray:
        return self.crossing_times[np.isfinite(self.crossing_times)]


@dataclass(frozen=True)
class KernelDensity:
    bandwidth: float
    grid: np.ndarray
    values: np.ndarray


def euler_fpt_sample(
    model: DriftModel,
    h: float,
    horizon: float,
    n_paths: int,
    bridge_correction: bool,
    seed: int,
    chunk_size: int = 4096,
) -> EulerRun:
    """Simulate X_{k+1} = X_k + a(X_k) h + sqrt(h) Z to the first crossing.

    A direct crossing (X_{k+1} <= 0) is recorded at time (k+1) h. With the
    correction, a step with both endpoints positive additionally crosses
    with the exact unit-diffusion probability exp(-2 X_k X_{k+1} / h); the
    crossing is then placed uniformly inside the step by reusing the
    accepted uniform (u/p is U(0,1) given u < p). Uniform draws happen
    whether or not they are consumed early, so runs with and without the
    correction see identical normals for paired comparison.
    """
    if h <= 0:
        raise ConfigError("step size h must be positive")
    n_steps = round(horizon / h)
    if n_steps < 1 or abs(n_steps * h - horizon) > 1e-9 * horizon:
        raise ConfigError("horizon must be a positive multiple of h")
    times = np.empty(n_paths)
    for start in range(0, n_paths, chunk_size):
        stop = min(n_paths, start + chunk_size)
        z = np.empty((stop - start, n_steps))
        u = np.empty((stop - start, n_steps)) if bridge_correction else None
        for i in range(start, stop):
            rng = np.random.Generator(np.random.PCG64(path_seed(seed, i)))
            z[i - start] = _normals(rng, (n_steps,))
            if bridge_correction:
                u[i - start] = rng.random(n_steps)
        status = _kernels.euler_block(
            float(model.x0), float(h), int(n_steps), z, u,
            model.drift_program, times[start:stop],
        )
        if status == 1:
            raise EvaluationError("drift evaluation failed along an Euler path")
        if status:
            raise FptmcError("kernel reported an internal program error")
    return EulerRun(h=h, horizon=horizon, n_paths=n_paths,
                    bridge_correction=bridge_correction, seed=seed,
                    crossing_times=times)


def empirical_cdf(run: EulerRun, t_values) -> np.ndarray:
    """P[tau <= t] estimated as #(crossings <= t) / n_paths."""
    t_values = np.atleast_1d(np.asarray(t_values, dtype=np.float64))
    finite = np.sort(run.uncensored)
    return np.searchsorted(finite, t_values, side="right") / run.n_paths


def kernel_density(run: EulerRun, bandwidth="silverman", grid=None) -> KernelDensity:
    """Gaussian KDE of the crossing-time density on the uncensored sample.

    Bandwidth is Silverman's 1.06 sd n^{-1/5} unless a number is given.
    The boundary at zero is handled by reflection, and the result is scaled
    by the uncensored fraction so it estimates the sub-density on
    (0, horizon].
    """
    samples = run.uncensored
    if len(samples) < 100:
        raise FptmcError(f"too few uncensored crossings ({len(samples)}) for a density")
    if bandwidth == "silverman":
        b = 1.06 * float(np.std(samples, ddof=1)) * len(samples) ** (-0.2)
    else:
        b = float(bandwidth)
        if b <= 0:
            raise ConfigError("bandwidth must be positive")
    if grid is None:
        grid = np.linspace(0.0, run.horizon, 401)
    grid = np.asarray(grid, dtype=np.float64)
    scale = len(samples) / run.n_paths
    vals = np.zeros_like(grid)
    block = 2048
    inv = 1.0 / (b * math.sqrt(2.0 * math.pi))
    for start in range(0, len(samples), block):
        s = samples[start:start + block]
        d1 = (grid[:, np.newaxis] - s[np.newaxis, :]) / b
        d2 = (grid[:, np.newaxis] + s[np.newaxis, :]) / b  # reflection at 0
        vals += inv * (np.exp(-0.5 * d1 * d1).sum(axis=1) + np.exp(-0.5 * d2 * d2).sum(axis=1))
    vals /= len(samples)
    vals *= scale
    return KernelDensity(bandwidth=b, grid=grid, values=vals)

"""Composite Simpson quadrature with grid-doubling error control.

All internal integrals in the package go through these routines.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import QuadratureError

__all__ = ["simpson_weights", "simpson_adaptive", "cumulative_simpson"]


def simpson_weights(m: int, h: float) -> np.ndarray:
    """Weights over m+1 equispaced points (m even): h/3 * [1,4,2,...,4,1]."""
    if m < 2 or m % 2:
        raise ValueError("Simpson needs an even number of intervals >= 2")
    w = np.full(m + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * (h / 3.0)


def _composite(f: Callable, a: float, b: float, m: int) -> float:
    zs = np.linspace(a, b, m + 1)
    ys = np.asarray(f(zs), dtype=np.float64)
    return float(ys @ simpson_weights(m, (b - a) / m))


def simpson_adaptive(
    f: Callable,
    a: float,
    b: float,
    rtol: float = 1e-10,
    m0: int = 8,
    max_doublings: int = 22,
) -> float:
    """Double the grid until two successive composite values agree to rtol
    (relative, with a small absolute floor for integrals near zero)."""
    if b == a:
        return 0.0
    m = m0
    prev = _composite(f, a, b, m)
    for _ in range(max_doublings):
        m *= 2
        cur = _composite(f, a, b, m)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300) + 1e-15 * rtol:
            return cur
        prev = cur
    raise QuadratureError(
        f"no convergence to rtol={rtol:g} on [{a:g}, {b:g}] after {max_doublings} doublings"
    )


def cumulative_simpson(f: Callable, grid: np.ndarray) -> np.ndarray:
    """Antiderivative values on ``grid`` using per-interval Simpson with
    midpoint evaluations (locally fourth order)."""
    grid = np.asarray(grid, dtype=np.float64)
    mids = 0.5 * (grid[:-1] + grid[1:])
    f_nodes = np.asarray(f(grid), dtype=np.float64)
    f_mids = np.asarray(f(mids), dtype=np.float64)
    steps = np.diff(grid)
    increments = steps / 6.0 * (f_nodes[:-1] + 4.0 * f_mids + f_nodes[1:])
    out = np.empty_like(grid)
    out[0] = 0.0
    np.cumsum(increments, out=out[1:])
    return out

"""Pure-numpy kernels, API-identical to the compiled core.

Selected automatically when the extension module is unavailable (or when
FPTMC_FORCE_FALLBACK=1). Results agree with the compiled core to rounding
error; summation order inside the Simpson reduction differs, so bit-level
equality across backends is not guaranteed.
"""

from __future__ import annotations

import numpy as np

from ..expr import (
    OP_ADD,
    OP_CONST,
    OP_COS,
    OP_DIV,
    OP_EXP,
    OP_LOG,
    OP_MUL,
    OP_NEG,
    OP_POWI,
    OP_SIN,
    OP_SQRT,
    OP_SUB,
    OP_TABLE,
    OP_VAR,
    Program,
)

BACKEND_NAME = "numpy"


def _table_lookup(table: np.ndarray, z0: float, dz: float, v: np.ndarray) -> np.ndarray:
    n = table.shape[0]
    pos = np.clip((v - z0) / dz, 0.0, n - 1.0)
    idx = np.minimum(pos.astype(np.int64), n - 2)
    frac = pos - idx
    return table[idx] + (table[idx + 1] - table[idx]) * frac


def program_eval(program: Program, z: np.ndarray) -> np.ndarray:
    """Evaluate a stack program elementwise on ``z``."""
    z = np.asarray(z, dtype=np.float64)
    stack: list[np.ndarray] = []
    with np.errstate(all="ignore"):
        for code, arg in zip(program.codes, program.args):
            if code == OP_CONST:
                stack.append(np.full(z.shape, program.consts[arg]))
            elif code == OP_VAR:
                stack.append(z.copy())
            elif code == OP_ADD:
                b = stack.pop()
                stack[-1] = stack[-1] + b
            elif code == OP_SUB:
                b = stack.pop()
                stack[-1] = stack[-1] - b
            elif code == OP_MUL:
                b = stack.pop()
                stack[-1] = stack[-1] * b
            elif code == OP_DIV:
                b = stack.pop()
                stack[-1] = stack[-1] / b
            elif code == OP_NEG:
                stack[-1] = -stack[-1]
            elif code == OP_EXP:
                stack[-1] = np.exp(stack[-1])
            elif code == OP_LOG:
                stack[-1] = np.log(stack[-1])
            elif code == OP_SIN:
                stack[-1] = np.sin(stack[-1])
            elif code == OP_COS:
                stack[-1] = np.cos(stack[-1])
            elif code == OP_SQRT:
                stack[-1] = np.sqrt(stack[-1])
            elif code == OP_POWI:
                stack[-1] = stack[-1] ** int(arg)
            elif code == OP_TABLE:
                stack[-1] = _table_lookup(
                    program.tables[arg], program.table_z0, program.table_dz, stack[-1]
                )
            else:
                raise ValueError(f"bad opcode {code}")
    assert len(stack) == 1
    return stack[0]


def functional_block(
    g1: np.ndarray,
    g2: np.ndarray,
    u2x2: np.ndarray,
    w: np.ndarray,
    x: float,
    t_grid: np.ndarray,
    program: Program,
    out: np.ndarray,
) -> tuple[int, float, float]:
    """Fill ``out[i, j]`` with the Simpson value of gamma along path i at t_j.

    The radius at grid index k is sqrt((u_k x)^2 + 2 x sqrt(t) g1 + t g2)
    with g1 = u * b1 and g2 = |b|^2 per path. Returns (status, bad_radius,
    bad_t); status 1 flags a non-finite potential value.
    """
    for j, t in enumerate(t_grid):
        c1 = 2.0 * x * np.sqrt(t)
        r2 = u2x2[np.newaxis, :] + c1 * g1 + t * g2
        np.maximum(r2, 0.0, out=r2)  # guard tiny negative rounding
        radius = np.sqrt(r2)
        vals = program_eval(program, radius)
        bad = ~np.isfinite(vals)
        if bad.any():
            i, k = np.argwhere(bad)[0]
            return 1, float(radius[i, k]), float(t)
        out[:, j] = vals @ w
    return 0, 0.0, 0.0


def euler_block(
    x0: float,
    h: float,
    n_steps: int,
    z_normals: np.ndarray,
    u_uniforms: np.ndarray | None,
    program: Program,
    out_times: np.ndarray,
) -> int:
    """Euler first-passage stepping for a block of paths.

    X_{k+1} = X_k + a(X_k) h + sqrt(h) Z_k; a direct crossing (X_{k+1} <= 0)
    is recorded at (k+1) h. With the bridge correction, a step with both
    endpoints positive crosses with probability exp(-2 X_k X_{k+1} / h); on
    acceptance of uniform u < p the time is k h + (u/p) h. Censored paths
    keep +inf.
    """
    n = z_normals.shape[0]
    sqrt_h = np.sqrt(h)
    x = np.full(n, x0, dtype=np.float64)
    alive = np.ones(n, dtype=bool)
    out_times[:] = np.inf
    with np.errstate(all="ignore"):
        for k in range(n_steps):
            if not alive.any():
                break
            a = program_eval(program, x)
            if not np.isfinite(a[alive]).all():
                return 1
            xn = x + a * h + sqrt_h * z_normals[:, k]
            direct = alive & (xn <= 0.0)
            out_times[direct] = (k + 1) * h
            if u_uniforms is not None:
                cand = alive & ~direct
                if cand.any():
                    p = np.exp(-2.0 * x * xn / h)
                    u = u_uniforms[:, k]
                    hit = cand & (u < p)
                    out_times[hit] = k * h + (u[hit] / p[hit]) * h
                    alive = alive & ~direct & ~hit
                else:
                    alive = alive & ~direct
            else:
                alive = alive & ~direct
            x = xn
    return 0

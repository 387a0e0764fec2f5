# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: stack-program evaluation, the bridge path functional,
and Euler first-passage stepping. Semantics match _fallback.py exactly;
only the floating-point reduction order may differ.
"""

from libc.math cimport sqrt, exp, log, sin, cos, pow, isfinite
from libc.stdlib cimport malloc, free

import numpy as np

BACKEND_NAME = "compiled"

cdef enum:
    OP_CONST = 0
    OP_VAR = 1
    OP_ADD = 2
    OP_SUB = 3
    OP_MUL = 4
    OP_DIV = 5
    OP_NEG = 6
    OP_EXP = 7
    OP_LOG = 8
    OP_SIN = 9
    OP_COS = 10
    OP_SQRT = 11
    OP_POWI = 12
    OP_TABLE = 13


cdef inline double _powi(double v, int n) noexcept nogil:
    cdef double acc = 1.0
    cdef int m = n if n >= 0 else -n
    cdef int i
    if m <= 8:
        for i in range(m):
            acc *= v
    else:
        acc = pow(v, <double> m)
    if n < 0:
        acc = 1.0 / acc
    return acc


cdef inline double _table(const double[:, ::1] tables, int which, double z0,
                          double dz, Py_ssize_t tlen, double v) noexcept nogil:
    cdef double pos = (v - z0) / dz
    cdef Py_ssize_t idx
    if pos < 0.0:
        pos = 0.0
    if pos > tlen - 1.0:
        pos = tlen - 1.0
    idx = <Py_ssize_t> pos
    if idx > tlen - 2:
        idx = tlen - 2
    cdef double frac = pos - idx
    return tables[which, idx] + (tables[which, idx + 1] - tables[which, idx]) * frac


cdef int _eval_row(const int[::1] codes, const int[::1] args, const double[::1] consts,
                   const double[:, ::1] tables, double tz0, double tdz,
                   const double* z, Py_ssize_t n, double* stack, Py_ssize_t n_ops) noexcept nogil:
    """Run the program on a row of n inputs; result lands in stack[0:n].
    Returns the final stack height (1 on success)."""
    cdef Py_ssize_t sp = 0, k
    cdef Py_ssize_t op
    cdef int code, arg
    cdef double* top
    cdef double* below
    cdef Py_ssize_t tlen = tables.shape[1]
    for op in range(n_ops):
        code = codes[op]
        arg = args[op]
        if code == OP_CONST:
            top = stack + sp * n
            for k in range(n):
                top[k] = consts[arg]
            sp += 1
        elif code == OP_VAR:
            top = stack + sp * n
            for k in range(n):
                top[k] = z[k]
            sp += 1
        elif code == OP_ADD:
            below = stack + (sp - 2) * n
            top = stack + (sp - 1) * n
            for k in range(n):
                below[k] += top[k]
            sp -= 1
        elif code == OP_SUB:
            below = stack + (sp - 2) * n
            top = stack + (sp - 1) * n
            for k in range(n):
                below[k] -= top[k]
            sp -= 1
        elif code == OP_MUL:
            below = stack + (sp - 2) * n
            top = stack + (sp - 1) * n
            for k in range(n):
                below[k] *= top[k]
            sp -= 1
        elif code == OP_DIV:
            below = stack + (sp - 2) * n
            top = stack + (sp - 1) * n
            for k in range(n):
                below[k] /= top[k]
            sp -= 1
        elif code == OP_NEG:
            top = stack + (sp - 1) * n
            for k in range(n):
                top[k] = -top[k]
        elif code == OP_EXP:
            top = stack + (sp - 1) * n
            for k in range(n):
                top[k] = exp(top[k])
        elif code == OP_LOG:
            top = stack + (sp - 1) * n
            for k in range(n):
                top[k] = log(top[k])
        elif code == OP_SIN:
            top = stack + (sp - 1) * n
            for k in range(n):
                top[k] = sin(top[k])
        elif code == OP_COS:
            top = stack + (sp - 1) * n
            for k in range(n):
                top[k] = cos(top[k])
        elif code == OP_SQRT:
            top = stack + (sp - 1) * n
            for k in range(n):
                top[k] = sqrt(top[k])
        elif code == OP_POWI:
            top = stack + (sp - 1) * n
            for k in range(n):
                top[k] = _powi(top[k], arg)
        elif code == OP_TABLE:
            top = stack + (sp - 1) * n
            for k in range(n):
                top[k] = _table(tables, arg, tz0, tdz, tlen, top[k])
        else:
            return -1
    return <int> sp


def program_eval(program, z):
    """Elementwise program evaluation (flat loop over a 1-d view)."""
    z_arr = np.ascontiguousarray(np.atleast_1d(np.asarray(z, dtype=np.float64)).ravel())
    out = np.empty_like(z_arr)
    cdef const int[::1] codes = program.codes
    cdef const int[::1] args = program.args
    cdef const double[::1] consts = program.consts
    cdef const double[:, ::1] tables = program.tables
    cdef double tz0 = program.table_z0
    cdef double tdz = program.table_dz
    cdef const double[::1] zv = z_arr
    cdef double[::1] ov = out
    cdef Py_ssize_t n = zv.shape[0]
    cdef Py_ssize_t depth = program.stack_depth
    cdef Py_ssize_t n_ops = codes.shape[0]
    cdef double* stack = <double*> malloc(depth * n * sizeof(double))
    if stack == NULL:
        raise MemoryError()
    cdef Py_ssize_t k
    cdef int sp
    try:
        with nogil:
            sp = _eval_row(codes, args, consts, tables, tz0, tdz, &zv[0], n, stack, n_ops)
            if sp == 1:
                for k in range(n):
                    ov[k] = stack[k]
        if sp != 1:
            raise ValueError("program left %d values on the stack" % sp)
    finally:
        free(stack)
    shaped = out.reshape(np.shape(z)) if np.ndim(z) else out[0]
    return shaped


def functional_block(g1, g2, u2x2, w, double x, t_grid, program, out):
    """Simpson value of the potential along each path at each t.

    g1[i,k] = u_k * b1, g2[i,k] = |b|^2, u2x2[k] = (u_k x)^2 and w are
    the Simpson weights; out has shape (n_paths, n_t).
    """
    cdef const double[:, ::1] G1 = g1
    cdef const double[:, ::1] G2 = g2
    cdef const double[::1] U2 = u2x2
    cdef const double[::1] W = w
    cdef const double[::1] T = t_grid
    cdef double[:, ::1] OUT = out
    cdef const int[::1] codes = program.codes
    cdef const int[::1] args = program.args
    cdef const double[::1] consts = program.consts
    cdef const double[:, ::1] tables = program.tables
    cdef double tz0 = program.table_z0
    cdef double tdz = program.table_dz
    cdef Py_ssize_t n_ops = codes.shape[0]
    cdef Py_ssize_t depth = program.stack_depth
    cdef Py_ssize_t npaths = G1.shape[0]
    cdef Py_ssize_t m1 = G1.shape[1]
    cdef Py_ssize_t nt = T.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double t, c1, r2, acc, val
    cdef int status = 0
    cdef double bad_radius = 0.0, bad_t = 0.0
    cdef int sp
    cdef double* radius = <double*> malloc(m1 * sizeof(double))
    cdef double* stack = <double*> malloc(depth * m1 * sizeof(double))
    if radius == NULL or stack == NULL:
        free(radius)
        free(stack)
        raise MemoryError()
    try:
        with nogil:
            for i in range(npaths):
                if status:
                    break
                for j in range(nt):
                    t = T[j]
                    c1 = 2.0 * x * sqrt(t)
                    for k in range(m1):
                        r2 = U2[k] + c1 * G1[i, k] + t * G2[i, k]
                        if r2 < 0.0:
                            r2 = 0.0
                        radius[k] = sqrt(r2)
                    sp = _eval_row(codes, args, consts, tables, tz0, tdz,
                                   radius, m1, stack, n_ops)
                    if sp != 1:
                        status = 2
                        break
                    acc = 0.0
                    for k in range(m1):
                        val = stack[k]
                        if not isfinite(val):
                            status = 1
                            bad_radius = radius[k]
                            bad_t = t
                            break
                        acc += W[k] * val
                    if status:
                        break
                    OUT[i, j] = acc
    finally:
        free(radius)
        free(stack)
    return status, bad_radius, bad_t


def euler_block(double x0, double h, Py_ssize_t n_steps, z_normals, u_uniforms,
                program, out_times):
    """Euler first-passage stepping; see the fallback docstring."""
    cdef const double[:, ::1] Z = z_normals
    cdef const double[:, ::1] U = u_uniforms if u_uniforms is not None \
        else np.zeros((0, 0), dtype=np.float64)
    cdef bint correct = u_uniforms is not None
    cdef double[::1] OUT = out_times
    cdef const int[::1] codes = program.codes
    cdef const int[::1] args = program.args
    cdef const double[::1] consts = program.consts
    cdef const double[:, ::1] tables = program.tables
    cdef double tz0 = program.table_z0
    cdef double tdz = program.table_dz
    cdef Py_ssize_t n_ops = codes.shape[0]
    cdef Py_ssize_t depth = program.stack_depth
    cdef Py_ssize_t n = Z.shape[0]
    cdef Py_ssize_t i, k
    cdef double sqrt_h = sqrt(h)
    cdef double xk, xn, a, p, u
    cdef int status = 0
    cdef int sp
    cdef double* stack = <double*> malloc(depth * sizeof(double))
    if stack == NULL:
        raise MemoryError()
    cdef double inf = np.inf
    try:
        with nogil:
            for i in range(n):
                OUT[i] = inf
                xk = x0
                for k in range(n_steps):
                    sp = _eval_row(codes, args, consts, tables, tz0, tdz,
                                   &xk, 1, stack, n_ops)
                    if sp != 1:
                        status = 2
                        break
                    a = stack[0]
                    if not isfinite(a):
                        status = 1
                        break
                    xn = xk + a * h + sqrt_h * Z[i, k]
                    if xn <= 0.0:
                        OUT[i] = (k + 1) * h
                        break
                    if correct:
                        p = exp(-2.0 * xk * xn / h)
                        u = U[i, k]
                        if u < p:
                            OUT[i] = k * h + (u / p) * h
                            break
                    xk = xn
                if status:
                    break
    finally:
        free(stack)
    return status

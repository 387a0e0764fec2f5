"""Drift expressions: parsing, evaluation, symbolic differentiation.

The grammar is one real variable ``z``, real literals, ``+ - * /``,
``^`` (integer exponents only, ``**`` accepted as an alias), the
functions ``exp log sin cos sqrt``, unary minus and parentheses.

Expression trees compile to small stack programs (see :class:`Program`)
that the simulation kernels interpret; the tree itself evaluates
directly through numpy and is the reference semantics.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DifferentiationError, ParseError

__all__ = [
    "Expr",
    "Const",
    "Var",
    "TableFunction",
    "parse_drift",
    "differentiate",
    "substitute",
    "evaluate",
    "to_string",
    "Program",
    "compile_program",
]

_FUNCTIONS = {
    "exp": np.exp,
    "log": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
}


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

class Expr:
    """Base node. Subclasses are immutable and hashable by identity."""

    def __call__(self, z):
        return evaluate(self, z)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    pass


@dataclass(frozen=True)
class Neg(Expr):
    a: Expr


@dataclass(frozen=True)
class Add(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Sub(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Mul(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Div(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class PowInt(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr


@dataclass(frozen=True)
class TableFunction:
    """Uniform-grid linear interpolant, clamped outside [z0, z0+(n-1)dz].

    Used for numerically transformed drifts that have no closed form.
    """

    z0: float
    dz: float
    values: np.ndarray = field(repr=False)

    def __call__(self, z):
        v = np.asarray(self.values, dtype=np.float64)
        pos = (np.asarray(z, dtype=np.float64) - self.z0) / self.dz
        pos = np.clip(pos, 0.0, len(v) - 1.0)
        idx = np.minimum(pos.astype(np.int64), len(v) - 2)
        frac = pos - idx
        out = v[idx] + (v[idx + 1] - v[idx]) * frac
        return float(out) if np.isscalar(z) else out

    @property
    def z_max(self) -> float:
        return self.z0 + (len(self.values) - 1) * self.dz


@dataclass(frozen=True)
class TableRef(Expr):
    """AST leaf wrapping a :class:`TableFunction`."""

    table: TableFunction


# ---------------------------------------------------------------------------
# Smart constructors: constant folding only, no general simplification.
# They keep derivative trees small so the compiled potential stays cheap.
# ---------------------------------------------------------------------------

def _is_const(e: Expr, v: float | None = None) -> bool:
    return isinstance(e, Const) and (v is None or e.value == v)


def _add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    return Add(a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(a, 0.0):
        return _neg(b)
    return Sub(a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    return Mul(a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return Const(0.0)
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return Const(a.value / b.value)
    return Div(a, b)


def _neg(a: Expr) -> Expr:
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def _powi(base: Expr, n: int) -> Expr:
    if n == 0:
        return Const(1.0)
    if n == 1:
        return base
    if _is_const(base):
        return Const(base.value ** n)
    return PowInt(base, n)


# ---------------------------------------------------------------------------
# Tokenizer / parser (recursive descent, positions kept for error messages)
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[+\-*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            bad_at = len(text) - len(stripped)
            raise ParseError(f"unexpected character {stripped[0]!r}", bad_at)
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            op = m.group("op")
            tokens.append(("op", "^" if op == "**" else op, m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, val, pos = self.peek()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}", pos)
        return self.advance()

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                rhs = self.term()
                e = Add(e, rhs) if val == "+" else Sub(e, rhs)
            else:
                return e

    def term(self) -> Expr:
        e = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                rhs = self.factor()
                e = Mul(e, rhs) if val == "*" else Div(e, rhs)
            else:
                return e

    def factor(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val in "+-":
            self.advance()
            inner = self.factor()
            return inner if val == "+" else _neg(inner)
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, val, pos = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            exponent = self.factor()  # right-associative, allows z^-2
            n = _const_int(exponent)
            if n is None:
                raise ParseError("exponent must be an integer constant", pos)
            return PowInt(base, n)
        return base

    def atom(self) -> Expr:
        kind, val, pos = self.advance()
        if kind == "num":
            return Const(float(val))
        if kind == "ident":
            if val == "z":
                return Var()
            if val in _FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                k2, v2, p2 = self.peek()
                if k2 == "op" and v2 == ",":
                    raise ParseError(f"{val} takes exactly one argument", p2)
                self.expect_op(")")
                return Call(val, arg)
            raise ParseError(f"unknown identifier {val!r}", pos)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ParseError(f"unexpected {val!r}" if val else "unexpected end of input", pos)


def _const_int(e: Expr) -> int | None:
    if isinstance(e, Neg):
        n = _const_int(e.a)
        return None if n is None else -n
    if isinstance(e, Const):
        n = round(e.value)
        if abs(e.value - n) < 1e-12 and abs(n) <= 1000:
            return int(n)
    return None


def parse_drift(text: str) -> Expr:
    """Parse a drift expression in the variable ``z``."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Evaluation / differentiation / printing
# ---------------------------------------------------------------------------

def evaluate(e: Expr, z):
    """Evaluate ``e`` at ``z`` (scalar or ndarray). Domain violations
    follow IEEE semantics (nan/inf); callers check finiteness."""
    with np.errstate(all="ignore"):
        out = _eval(e, np.asarray(z, dtype=np.float64))
    return float(out) if np.isscalar(z) or np.ndim(z) == 0 else np.asarray(out, dtype=np.float64)


def _eval(e: Expr, z):
    if isinstance(e, Const):
        return np.broadcast_to(np.float64(e.value), np.shape(z)) if np.ndim(z) else np.float64(e.value)
    if isinstance(e, Var):
        return z
    if isinstance(e, Neg):
        return -_eval(e.a, z)
    if isinstance(e, Add):
        return _eval(e.a, z) + _eval(e.b, z)
    if isinstance(e, Sub):
        return _eval(e.a, z) - _eval(e.b, z)
    if isinstance(e, Mul):
        return _eval(e.a, z) * _eval(e.b, z)
    if isinstance(e, Div):
        return _eval(e.a, z) / _eval(e.b, z)
    if isinstance(e, PowInt):
        return _eval(e.base, z) ** e.exponent
    if isinstance(e, Call):
        return _FUNCTIONS[e.fn](_eval(e.arg, z))
    if isinstance(e, TableRef):
        return e.table(z)
    raise TypeError(f"unknown node {type(e).__name__}")


def differentiate(e: Expr) -> Expr:
    """Symbolic d/dz. Total on the grammar; table leaves are rejected."""
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0)
    if isinstance(e, Neg):
        return _neg(differentiate(e.a))
    if isinstance(e, Add):
        return _add(differentiate(e.a), differentiate(e.b))
    if isinstance(e, Sub):
        return _sub(differentiate(e.a), differentiate(e.b))
    if isinstance(e, Mul):
        return _add(_mul(differentiate(e.a), e.b), _mul(e.a, differentiate(e.b)))
    if isinstance(e, Div):
        num = _sub(_mul(differentiate(e.a), e.b), _mul(e.a, differentiate(e.b)))
        return _div(num, _powi(e.b, 2))
    if isinstance(e, PowInt):
        return _mul(_mul(Const(float(e.exponent)), _powi(e.base, e.exponent - 1)),
                    differentiate(e.base))
    if isinstance(e, Call):
        da = differentiate(e.arg)
        if e.fn == "exp":
            return _mul(Call("exp", e.arg), da)
        if e.fn == "log":
            return _div(da, e.arg)
        if e.fn == "sin":
            return _mul(Call("cos", e.arg), da)
        if e.fn == "cos":
            return _neg(_mul(Call("sin", e.arg), da))
        if e.fn == "sqrt":
            return _div(da, _mul(Const(2.0), Call("sqrt", e.arg)))
    if isinstance(e, TableRef):
        raise DifferentiationError("table-backed functions have no symbolic derivative")
    raise TypeError(f"unknown node {type(e).__name__}")


def substitute(e: Expr, replacement: Expr) -> Expr:
    """Replace every occurrence of the variable by ``replacement``."""
    if isinstance(e, Var):
        return replacement
    if isinstance(e, (Const, TableRef)):
        return e
    if isinstance(e, Neg):
        return _neg(substitute(e.a, replacement))
    if isinstance(e, Add):
        return _add(substitute(e.a, replacement), substitute(e.b, replacement))
    if isinstance(e, Sub):
        return _sub(substitute(e.a, replacement), substitute(e.b, replacement))
    if isinstance(e, Mul):
        return _mul(substitute(e.a, replacement), substitute(e.b, replacement))
    if isinstance(e, Div):
        return _div(substitute(e.a, replacement), substitute(e.b, replacement))
    if isinstance(e, PowInt):
        return _powi(substitute(e.base, replacement), e.exponent)
    if isinstance(e, Call):
        return Call(e.fn, substitute(e.arg, replacement))
    raise TypeError(f"unknown node {type(e).__name__}")


# precedence levels for minimal-parenthesis printing
_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _fmt_const(v: float) -> str:
    if v == int(v) and abs(v) < 1e16 and not (v == 0.0 and math.copysign(1.0, v) < 0):
        return str(int(v))
    return repr(v)  # shortest exact form; keeps the sign of -0.0


def to_string(e: Expr) -> str:
    """Render with the fewest parentheses that re-parse equivalently."""
    return _render(e)[0]


def _render(e: Expr) -> tuple[str, int]:
    if isinstance(e, Const):
        s = _fmt_const(e.value)
        return (s, _PREC_NEG if s.startswith("-") else _PREC_ATOM)
    if isinstance(e, Var):
        return ("z", _PREC_ATOM)
    if isinstance(e, Neg):
        s, p = _render(e.a)
        if p < _PREC_NEG:
            s = f"({s})"
        return (f"-{s}", _PREC_NEG)
    if isinstance(e, (Add, Sub)):
        op = "+" if isinstance(e, Add) else "-"
        ls, lp = _render(e.a)
        rs, rp = _render(e.b)
        if lp < _PREC_ADD:
            ls = f"({ls})"
        if rp <= _PREC_ADD:
            rs = f"({rs})"
        return (f"{ls} {op} {rs}", _PREC_ADD)
    if isinstance(e, (Mul, Div)):
        op = "*" if isinstance(e, Mul) else "/"
        ls, lp = _render(e.a)
        rs, rp = _render(e.b)
        if lp < _PREC_MUL:
            ls = f"({ls})"
        if rp <= _PREC_MUL:
            rs = f"({rs})"
        return (f"{ls}{op}{rs}", _PREC_MUL)
    if isinstance(e, PowInt):
        bs, bp = _render(e.base)
        if bp < _PREC_ATOM:
            bs = f"({bs})"
        return (f"{bs}^{e.exponent}", _PREC_POW)
    if isinstance(e, Call):
        return (f"{e.fn}({_render(e.arg)[0]})", _PREC_ATOM)
    if isinstance(e, TableRef):
        t = e.table
        return (f"table(z0={t.z0:g}, dz={t.dz:g}, n={len(t.values)})", _PREC_ATOM)
    raise TypeError(f"unknown node {type(e).__name__}")


# ---------------------------------------------------------------------------
# Stack programs for the simulation kernels
# ---------------------------------------------------------------------------

OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV = 0, 1, 2, 3, 4, 5
OP_NEG, OP_EXP, OP_LOG, OP_SIN, OP_COS, OP_SQRT = 6, 7, 8, 9, 10, 11
OP_POWI, OP_TABLE = 12, 13

_CALL_OPS = {"exp": OP_EXP, "log": OP_LOG, "sin": OP_SIN, "cos": OP_COS, "sqrt": OP_SQRT}


@dataclass(frozen=True)
class Program:
    """Postfix stack program over one real input.

    ``tables`` holds the lookup payloads for OP_TABLE instructions; all
    tables of one program share a uniform grid (z0, dz).
    """

    codes: np.ndarray
    args: np.ndarray
    consts: np.ndarray
    tables: np.ndarray
    table_z0: float
    table_dz: float
    stack_depth: int


def compile_program(e: Expr) -> Program:
    codes: list[int] = []
    args: list[int] = []
    consts: list[float] = []
    tables: list[TableFunction] = []

    def emit(expr: Expr) -> int:
        if isinstance(expr, Const):
            codes.append(OP_CONST)
            args.append(len(consts))
            consts.append(float(expr.value))
            return 1
        if isinstance(expr, Var):
            codes.append(OP_VAR)
            args.append(0)
            return 1
        if isinstance(expr, Neg):
            d = emit(expr.a)
            codes.append(OP_NEG)
            args.append(0)
            return d
        if isinstance(expr, (Add, Sub, Mul, Div)):
            d1 = emit(expr.a)
            d2 = emit(expr.b)
            codes.append({Add: OP_ADD, Sub: OP_SUB, Mul: OP_MUL, Div: OP_DIV}[type(expr)])
            args.append(0)
            return max(d1, 1 + d2)
        if isinstance(expr, PowInt):
            d = emit(expr.base)
            codes.append(OP_POWI)
            args.append(expr.exponent)
            return d
        if isinstance(expr, Call):
            d = emit(expr.arg)
            codes.append(_CALL_OPS[expr.fn])
            args.append(0)
            return d
        if isinstance(expr, TableRef):
            for k, t in enumerate(tables):
                if t is expr.table:
                    idx = k
                    break
            else:
                if tables and (tables[0].z0 != expr.table.z0
                               or tables[0].dz != expr.table.dz
                               or len(tables[0].values) != len(expr.table.values)):
                    raise ValueError("all tables in one program must share a grid")
                idx = len(tables)
                tables.append(expr.table)
            # a table leaf is interp(z): push the variable, then look it up
            codes.append(OP_VAR)
            args.append(0)
            codes.append(OP_TABLE)
            args.append(idx)
            return 1
        raise TypeError(f"unknown node {type(expr).__name__}")

    depth = emit(e)
    if tables:
        tab = np.ascontiguousarray([t.values for t in tables], dtype=np.float64)
        z0, dz = tables[0].z0, tables[0].dz
    else:
        tab = np.zeros((0, 0), dtype=np.float64)
        z0, dz = 0.0, 1.0
    return Program(
        codes=np.asarray(codes, dtype=np.int32),
        args=np.asarray(args, dtype=np.int32),
        consts=np.asarray(consts, dtype=np.float64),
        tables=tab,
        table_z0=float(z0),
        table_dz=float(dz),
        stack_depth=int(depth),
    )

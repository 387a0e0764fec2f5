"""Diffusion model: drift parsing, the potential, assumption checks, the
unit-diffusion reduction, and the closed-form reference densities.

The process is dX_t = a(X_t) dt + dW_t started at x > 0; tau_0 is its first
passage to level zero. The potential gamma(z) = (a(z)^2 + a'(z)) / 2 drives
both the density representation and the tail eigenvalue problem.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .errors import ConfigError, EvaluationError
from .quadrature import cumulative_simpson, simpson_adaptive

__all__ = [
    "DriftModel",
    "GeneralDiffusionSpec",
    "AssumptionReport",
    "build_model",
    "check_assumptions",
    "lamperti_transform",
    "bm_fpt_density",
    "log_bm_fpt_density",
    "ou_fpt_density",
    "model_to_json",
    "model_from_json",
]


@dataclass(frozen=True)
class DriftModel:
    """Parsed drift with its exact derivative and derived potential.

    ``a`` and ``a_prime`` are expression trees (or table interpolants after
    a numeric reduction); ``gamma_expr`` is the composed tree
    (a^2 + a') / 2, so the identity gamma = (a^2 + a') / 2 holds pointwise
    by construction.
    """

    a: ex.Expr
    a_prime: ex.Expr
    x0: float
    int_a_0_to_x: float
    gamma_expr: ex.Expr
    source_text: str | None
    gamma_program: ex.Program = field(repr=False)
    drift_program: ex.Program = field(repr=False)
    z_valid_max: float = math.inf

    def gamma(self, z):
        return ex.evaluate(self.gamma_expr, z)

    def drift(self, z):
        return ex.evaluate(self.a, z)

    def drift_prime(self, z):
        return ex.evaluate(self.a_prime, z)

    @property
    def prefactor_log(self) -> float:
        """log of the density prefactor exp(-int_0^x a)."""
        return -self.int_a_0_to_x


@dataclass(frozen=True)
class GeneralDiffusionSpec:
    """dY = b(Y) dt + sigma(Y) dW started at ``start``, absorbed at ``level``."""

    b: ex.Expr
    sigma: ex.Expr
    level: float
    start: float

    def __post_init__(self):
        if not self.start > self.level:
            raise ConfigError("start must exceed the absorption level")


@dataclass(frozen=True)
class AssumptionReport:
    a_c1_on_domain: bool
    divergence_heuristic: str  # "diverges" | "converges" | "inconclusive"
    partial_integrals: dict[float, float]
    gamma_lower_bound_estimate: float


def _model_from_exprs(
    a: ex.Expr,
    a_prime: ex.Expr,
    x: float,
    source_text: str | None,
    z_valid_max: float = math.inf,
) -> DriftModel:
    gamma_expr = ex.Mul(ex.Const(0.5), ex.Add(ex.Mul(a, a), a_prime))
    int_a = simpson_adaptive(lambda z: ex.evaluate(a, z), 0.0, x, rtol=1e-10)
    return DriftModel(
        a=a,
        a_prime=a_prime,
        x0=float(x),
        int_a_0_to_x=int_a,
        gamma_expr=gamma_expr,
        source_text=source_text,
        gamma_program=ex.compile_program(gamma_expr),
        drift_program=ex.compile_program(a),
        z_valid_max=z_valid_max,
    )


def _require_finite(values: np.ndarray, what: str) -> None:
    values = np.atleast_1d(values)
    if not np.isfinite(values).all():
        raise EvaluationError(f"{what} is not finite on the probe grid")


def build_model(a_text: str, x: float, probe_max: float = 10.0) -> DriftModel:
    """Parse the drift, differentiate symbolically, and integrate int_0^x a
    by grid-doubling Simpson (relative tolerance 1e-10)."""
    if not x > 0:
        raise ConfigError("start level x must be positive")
    a = ex.parse_drift(a_text)
    a_prime = ex.differentiate(a)
    probes = np.linspace(0.0, max(probe_max, x), 257)
    _require_finite(ex.evaluate(a, probes), f"drift {a_text!r}")
    _require_finite(ex.evaluate(a_prime, probes), f"drift derivative of {a_text!r}")
    return _model_from_exprs(a, a_prime, x, a_text)


# ---------------------------------------------------------------------------
# Assumption check: int_0^inf exp(-2 int_0^w a) dw = infinity
# ---------------------------------------------------------------------------

_CUTOFFS = (10.0, 100.0, 1000.0, 10000.0)
_DIVERGE_THRESHOLD = 1e6
_LOG_OVERFLOW = 700.0


def check_assumptions(model: DriftModel, probe_max: float = 10.0) -> AssumptionReport:
    """Finite-cutoff heuristic for the divergence condition.

    ``diverges``      partial integral exceeds 1e6, its integrand overflows,
                      or the per-decade increments keep growing;
    ``converges``     successive partial integrals agree to 1e-8 relative
                      (flags that the assumption fails);
    ``inconclusive``  everything else.
    """
    c1_ok = True
    try:
        zs = np.linspace(0.0, probe_max, 513)
        _require_finite(model.drift(zs), "drift")
        _require_finite(model.drift_prime(zs), "drift derivative")
    except EvaluationError:
        c1_ok = False

    partials: dict[float, float] = {}
    verdict = "inconclusive"
    w_max = _CUTOFFS[-1]
    grid = np.unique(np.concatenate([
        np.linspace(0.0, 10.0, 2001),
        np.geomspace(10.0, w_max, 4001),
    ]))
    neg2a = -2.0 * cumulative_simpson(model.drift, grid)
    if np.max(neg2a) >= _LOG_OVERFLOW:
        # integrand reaches exp(700): the integral is certainly divergent
        first = grid[int(np.argmax(neg2a >= _LOG_OVERFLOW))]
        cum = _prefix_trapezoid(grid, np.exp(np.minimum(neg2a, _LOG_OVERFLOW)))
        for c in _CUTOFFS:
            partials[c] = math.inf if c >= first else _read_prefix(grid, cum, c)
        verdict = "diverges"
    else:
        # one prefix pass, so the partials are nondecreasing by construction
        cum = _prefix_trapezoid(grid, np.exp(neg2a))
        for c in _CUTOFFS:
            partials[c] = _read_prefix(grid, cum, c)
        vals = [partials[c] for c in _CUTOFFS]
        if vals[-1] > _DIVERGE_THRESHOLD:
            verdict = "diverges"
        else:
            increments = np.diff([0.0] + vals)
            rel_gap = abs(vals[-1] - vals[-2]) / max(abs(vals[-1]), 1e-300)
            if rel_gap <= 1e-8:
                verdict = "converges"
            elif np.all(increments[1:] >= increments[:-1] * 0.999):
                verdict = "diverges"

    gammas = model.gamma(np.linspace(0.0, probe_max, 4001))
    return AssumptionReport(
        a_c1_on_domain=c1_ok,
        divergence_heuristic=verdict,
        partial_integrals=partials,
        gamma_lower_bound_estimate=float(np.min(gammas)),
    )


def _prefix_trapezoid(grid: np.ndarray, values: np.ndarray) -> np.ndarray:
    out = np.zeros_like(grid)
    np.cumsum(0.5 * np.diff(grid) * (values[:-1] + values[1:]), out=out[1:])
    return out


def _read_prefix(grid: np.ndarray, cum: np.ndarray, cutoff: float) -> float:
    idx = int(np.searchsorted(grid, cutoff, side="right")) - 1
    return float(cum[idx])


# ---------------------------------------------------------------------------
# Reduction of dY = b dt + sigma dW to unit diffusion coefficient
# ---------------------------------------------------------------------------

def lamperti_transform(
    g: GeneralDiffusionSpec,
    table_points: int = 4097,
    v_margin: float = 3.0,
    z_span: float | None = None,
) -> tuple[DriftModel, float]:
    """Map Y to X = int_level^Y dz / sigma(z), so X has unit diffusion.

    Returns the transformed model and x = int_level^start dz/sigma. The
    transformed drift is a(F(v)) = b(v)/sigma(v) - sigma'(v)/2. For constant
    sigma this is exact and symbolic; otherwise a and a' are tabulated on a
    uniform grid in the transformed coordinate, with the monotone map F
    inverted by bisection to 1e-12 at the table nodes.

    The density representation evaluates the potential at radii up to
    roughly x + sqrt(t_max) * max|bridge|, which can far exceed the start
    level. ``z_span`` asks for table coverage of [0, z_span] in the
    transformed coordinate; the original-coordinate endpoint is grown until
    F reaches it (an error reports drifts whose transformed state space is
    bounded and cannot cover the span). With ``z_span=None`` the table
    spans F(start + v_margin*(start-level)).
    """
    ell, y = g.level, g.start
    sigma_prime = ex.differentiate(g.sigma)
    probes = np.linspace(ell, y, 513)
    sig_vals = ex.evaluate(g.sigma, probes)
    if not np.all(np.isfinite(sig_vals)) or np.any(sig_vals <= 0.0):
        bad = probes[~(np.isfinite(sig_vals) & (sig_vals > 0.0))][0]
        raise EvaluationError(f"sigma must be positive on [level, start]; fails near v={bad:g}")

    x = simpson_adaptive(lambda v: 1.0 / ex.evaluate(g.sigma, v), ell, y, rtol=1e-10)

    # h(v) = b/sigma - sigma'/2 and its v-derivative, both symbolic
    h_expr = ex.Sub(ex.Div(g.b, g.sigma), ex.Div(sigma_prime, ex.Const(2.0)))
    h_prime = ex.differentiate(h_expr)

    if isinstance(sigma_prime, ex.Const) and sigma_prime.value == 0.0:
        # constant sigma: F^{-1}(z) = level + c z exactly
        c = float(ex.evaluate(g.sigma, 0.5 * (ell + y)))
        v_of_z = ex._add(ex._mul(ex.Const(c), ex.Var()), ex.Const(ell))
        a = ex.substitute(h_expr, v_of_z)
        a_prime = ex.differentiate(a)
        return _model_from_exprs(a, a_prime, x, None), x

    v_max = y + v_margin * (y - ell)
    if z_span is not None:
        v_max = _grow_to_span(g.sigma, ell, y, v_max, float(z_span))
    v_grid = _graded_v_grid(ell, y, v_max, 8 * (table_points - 1) + 1)
    f_grid = cumulative_simpson(lambda v: 1.0 / ex.evaluate(g.sigma, v), v_grid)
    if np.any(np.diff(f_grid) <= 0.0):
        raise EvaluationError("transform map is not strictly increasing (sigma sign error)")

    z_hi = float(f_grid[-1])
    z_nodes = np.linspace(0.0, z_hi, table_points)
    v_nodes = _invert_monotone(v_grid, f_grid, ex.evaluate, g.sigma, z_nodes)

    a_vals = ex.evaluate(h_expr, v_nodes)
    ap_vals = ex.evaluate(h_prime, v_nodes) * ex.evaluate(g.sigma, v_nodes)
    _require_finite(a_vals, "transformed drift")
    _require_finite(ap_vals, "transformed drift derivative")

    dz = z_nodes[1] - z_nodes[0]
    a_tab = ex.TableRef(ex.TableFunction(0.0, float(dz), np.ascontiguousarray(a_vals)))
    ap_tab = ex.TableRef(ex.TableFunction(0.0, float(dz), np.ascontiguousarray(ap_vals)))
    model = _model_from_exprs(a_tab, ap_tab, x, None, z_valid_max=z_hi)
    return model, x


def _grow_to_span(sigma: ex.Expr, ell: float, y: float, v_max: float, z_span: float) -> float:
    """Smallest endpoint (by doubling the width) whose image under
    F(v) = int_ell^v dz/sigma covers z_span."""
    width = max(v_max - ell, y - ell)
    for _ in range(60):
        v_max = ell + width
        grid = _graded_v_grid(ell, y, v_max, 4097)
        span = float(cumulative_simpson(lambda v: 1.0 / ex.evaluate(sigma, v), grid)[-1])
        if span >= z_span:
            return v_max
        width *= 2.0
    raise EvaluationError(
        f"the transformed coordinate cannot reach {z_span:g} (sigma grows too "
        f"fast: the transformed state space is bounded); this drift class is "
        f"outside the supported assumptions"
    )


def _graded_v_grid(ell: float, y: float, v_max: float, n_points: int) -> np.ndarray:
    """Dense, linearly spaced nodes near the start region, geometrically
    spaced beyond, so wide tables keep accuracy where sigma varies fastest."""
    near_hi = min(v_max, ell + 2.0 * (y - ell))
    near = np.linspace(ell, near_hi, n_points // 2 + 1)
    if near_hi >= v_max:
        return np.linspace(ell, v_max, n_points)
    far = near_hi + np.geomspace(near[1] - near[0], v_max - near_hi,
                                 n_points - n_points // 2)
    return np.unique(np.concatenate([near, far, [v_max]]))


def _invert_monotone(v_grid, f_grid, evaluate, sigma, z_targets) -> np.ndarray:
    """Bisection solve F(v) = z for each target, vectorized across targets.

    Brackets come from the dense (v, F) table; inside a bracket, F is
    refined by 8-panel local Simpson of 1/sigma from the bracket's left
    node, which keeps each evaluation O(1).
    """
    idx = np.clip(np.searchsorted(f_grid, z_targets, side="right") - 1, 0, len(v_grid) - 2)
    lo = v_grid[idx].copy()
    hi = v_grid[idx + 1].copy()
    f_lo = f_grid[idx]
    v_left = v_grid[idx]

    def f_local(v):
        # F(v) = F(v_left) + int_{v_left}^{v} dz/sigma, 8-panel Simpson
        steps = (v - v_left) / 8.0
        acc = np.zeros_like(v)
        nodes = v_left + steps * np.arange(9.0)[:, None]
        vals = 1.0 / evaluate(sigma, nodes)
        w = np.array([1, 4, 2, 4, 2, 4, 2, 4, 1], dtype=np.float64)
        acc = (steps / 3.0) * (w @ vals)
        return f_lo + acc

    for _ in range(60):
        mid = 0.5 * (lo + hi)
        below = f_local(mid) < z_targets
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) < 1e-12 * max(1.0, float(np.max(np.abs(v_grid)))):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Closed-form reference densities
# ---------------------------------------------------------------------------

def log_bm_fpt_density(x: float, t) -> np.ndarray:
    """log of q_x(t) = x / sqrt(2 pi t^3) * exp(-x^2 / (2t))."""
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.log(x) - 0.5 * np.log(2.0 * np.pi * t ** 3) - x * x / (2.0 * t)


def bm_fpt_density(x: float, t):
    """First-passage density of standard Brownian motion from x > 0 to 0;
    q_x(t) = x / sqrt(2 pi t^3) exp(-x^2/(2t)), with q_x(0) = 0."""
    if not x > 0:
        raise ValueError("x must be positive")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    out = np.zeros_like(t_arr, dtype=np.float64)
    pos = t_arr > 0
    out[pos] = np.exp(log_bm_fpt_density(x, t_arr[pos]))
    return float(out) if np.ndim(t) == 0 else out


def _log_sinh(t: np.ndarray) -> np.ndarray:
    small = t < 20.0
    out = np.empty_like(t)
    out[small] = np.log(np.sinh(t[small]))
    big = ~small
    out[big] = t[big] - math.log(2.0) + np.log1p(-np.exp(-2.0 * t[big]))
    return out


def ou_fpt_density(t):
    """Closed-form first-passage density to 0 for a(z) = -z started at x = 1:
    p_1(t) = (2 pi)^{-1/2} sinh(t)^{-3/2} exp((1 + t - coth t)/2)."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any(t_arr <= 0):
        raise ValueError("t must be positive")
    log_p = (
        -0.5 * math.log(2.0 * math.pi)
        - 1.5 * _log_sinh(t_arr)
        + 0.5 * (1.0 + t_arr - 1.0 / np.tanh(t_arr))
    )
    out = np.exp(log_p)
    return float(out[0]) if np.ndim(t) == 0 else out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def model_to_json(model: DriftModel) -> str:
    if model.source_text is None:
        raise ConfigError("numerically transformed drifts have no expression form to serialize")
    return json.dumps({"drift": model.source_text, "x": model.x0})


def model_from_json(payload: str) -> DriftModel:
    data = json.loads(payload)
    return build_model(data["drift"], float(data["x"]))

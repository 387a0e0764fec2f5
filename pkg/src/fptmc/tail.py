"""Exponential tail of the first-passage density.

The decay rate is the principal Dirichlet eigenvalue on (0, n) of
(1/2) phi'' + a phi' = -mu phi. A Liouville substitution psi = e^{A} phi
with A = int_0^z a turns this into the Schroedinger problem

    -(1/2) psi'' + gamma(z) psi = mu psi,   psi(0) = psi(n) = 0,

whose potential is exactly the model's gamma (asserted at solve time).
Central differences give a symmetric tridiagonal matrix; its smallest
eigenvalue comes from bisection on Sturm-sequence counts, Richardson
extrapolated across mesh and 2x mesh. Past a splice time T the density is
continued as c_star * q_x(t) * exp(-mu1 t) with c_star matching the
Monte-Carlo value at T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EvaluationError, FptmcError, MeshConvergenceError
from .estimator import DensityEstimate
from .model import DriftModel, log_bm_fpt_density

__all__ = [
    "EigenResult",
    "TailModel",
    "principal_eigenvalue",
    "build_tail",
    "evaluate_mixture",
    "default_splice_time",
]


@dataclass(frozen=True)
class EigenResult:
    mu1: float  # Richardson value across (mesh, 2*mesh)
    n: float
    mesh: int
    eigenfunction_samples: np.ndarray = field(repr=False)  # on the 2*mesh grid
    mu_coarse: float = 0.0
    mu_fine: float = 0.0


@dataclass(frozen=True)
class TailModel:
    splice_time: float
    decay_rate: float
    c_star: float
    log_c_star: float
    source: DensityEstimate
    eigen: EigenResult


def _sturm_count(diag: np.ndarray, off2: float, lam: float, pivmin: float) -> int:
    """Number of eigenvalues of the symmetric tridiagonal matrix below lam."""
    count = 0
    d = diag[0] - lam
    if abs(d) < pivmin:
        d = -pivmin
    if d < 0:
        count += 1
    for k in range(1, len(diag)):
        d = diag[k] - lam - off2 / d
        if abs(d) < pivmin:
            d = -pivmin
        if d < 0:
            count += 1
    return count


def _smallest_eigenvalue(diag: np.ndarray, off: float, tol: float = 0.0) -> float:
    """Bisection on Sturm counts, run past the requested 1e-10 down to
    rounding resolution: the tail ladder compares eigenvalues across domain
    sizes whose differences would otherwise drown in bisection slack."""
    off2 = off * off
    lo = float(np.min(diag)) - 2.0 * abs(off)
    hi = float(np.max(diag)) + 2.0 * abs(off)
    pivmin = 1e-280
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break  # interval at rounding resolution
        if _sturm_count(diag, off2, mid, pivmin) >= 1:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _solve_tridiag(diag: np.ndarray, off: float, rhs: np.ndarray) -> np.ndarray:
    """Thomas algorithm with a pivot floor (the shifted system is nearly
    singular by construction, which is what inverse iteration wants)."""
    n = len(diag)
    c = np.empty(n)
    d = np.empty(n)
    piv = diag[0]
    if abs(piv) < 1e-30:
        piv = 1e-30
    c[0] = off / piv
    d[0] = rhs[0] / piv
    for k in range(1, n):
        piv = diag[k] - off * c[k - 1]
        if abs(piv) < 1e-30:
            piv = 1e-30
        c[k] = off / piv
        d[k] = (rhs[k] - off * d[k - 1]) / piv
    x = np.empty(n)
    x[-1] = d[-1]
    for k in range(n - 2, -1, -1):
        x[k] = d[k] - c[k] * x[k + 1]
    return x


def _assert_liouville_identity(model: DriftModel, z: np.ndarray) -> None:
    # Schroedinger potential from the Sturm-Liouville weight w = e^{2A}:
    # (sqrt(w))'' / sqrt(w) = a' + a^2, which must equal 2 gamma.
    lhs = model.drift_prime(z) + model.drift(z) ** 2
    rhs = 2.0 * model.gamma(z)
    scale = 1.0 + np.abs(rhs)
    if np.max(np.abs(lhs - rhs) / scale) > 1e-10:
        raise FptmcError("Liouville potential does not match the model potential")


def _eigen_level(model: DriftModel, n: float, mesh: int) -> tuple[float, np.ndarray, np.ndarray]:
    h = n / mesh
    z = h * np.arange(1, mesh)
    v = model.gamma(z)
    if not np.isfinite(v).all():
        raise EvaluationError("potential not finite on the eigenvalue mesh")
    diag = 1.0 / (h * h) + v
    off = -0.5 / (h * h)
    mu = _smallest_eigenvalue(diag, off)
    return mu, diag, np.full(1, off)


def principal_eigenvalue(model: DriftModel, n: float, mesh: int = 4000) -> EigenResult:
    """Smallest Dirichlet eigenvalue on (0, n), Richardson extrapolated.

    Raises MeshConvergenceError when the mesh and 2x-mesh values differ by
    more than 1e-3 (advise a larger mesh). The eigenfunction is recovered by
    inverse iteration on the fine level and normalized to unit L2 norm with
    a positive interior.
    """
    if mesh < 100:
        raise ConfigError("mesh must be at least 100")
    if not n > 0:
        raise ConfigError("domain length n must be positive")
    _assert_liouville_identity(model, np.linspace(0.0, n, 2001))
    mu_coarse, _, _ = _eigen_level(model, n, mesh)
    mu_fine, diag_f, off_f = _eigen_level(model, n, 2 * mesh)
    if abs(mu_coarse - mu_fine) > 1e-3:
        raise MeshConvergenceError(
            f"eigenvalue moved {abs(mu_coarse - mu_fine):.3g} between mesh={mesh} "
            f"and mesh={2 * mesh}; increase the mesh"
        )
    mu1 = (4.0 * mu_fine - mu_coarse) / 3.0

    off = float(off_f[0])
    shifted = diag_f - mu_fine
    vec = np.ones(len(shifted))
    for _ in range(3):
        vec = _solve_tridiag(shifted, off, vec)
        vec /= np.linalg.norm(vec)
    if vec.sum() < 0:
        vec = -vec
    h = n / (2 * mesh)
    vec /= math.sqrt(float(np.sum(vec * vec) * h))
    samples = np.zeros(2 * mesh + 1)
    samples[1:-1] = vec
    return EigenResult(mu1=mu1, n=float(n), mesh=int(mesh),
                       eigenfunction_samples=samples,
                       mu_coarse=mu_coarse, mu_fine=mu_fine)


# ---------------------------------------------------------------------------
# Mixture density
# ---------------------------------------------------------------------------

def default_splice_time(estimate: DensityEstimate, rel_err_threshold: float = 0.15) -> float:
    """First grid time where std_err / p_hat exceeds the threshold (the
    Monte-Carlo value stops being trustworthy); falls back to the last
    grid point when the relative error stays below it."""
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = estimate.std_err / estimate.p_hat
    bad = np.flatnonzero(~np.isfinite(rel) | (rel > rel_err_threshold))
    if len(bad) == 0:
        return float(estimate.t_grid[-1])
    return float(estimate.t_grid[bad[0]])


def build_tail(
    model: DriftModel,
    estimate: DensityEstimate,
    splice_time: float | None = None,
    n: float | None = None,
    mesh: int = 4000,
) -> TailModel:
    """Splice the Monte-Carlo estimate with c_star q_x(t) exp(-mu1 t).

    c_star = p_hat(T) / (q_x(T) exp(-mu1 T)) makes the two branches equal
    at T by construction.
    """
    if splice_time is None:
        splice_time = default_splice_time(estimate)
    if n is None:
        n = max(8.0, 4.0 * model.x0)
    matches = np.flatnonzero(np.isclose(estimate.t_grid, splice_time, rtol=1e-12, atol=0.0))
    if len(matches) == 0:
        raise ConfigError(f"splice time {splice_time:g} is not a grid point")
    idx = int(matches[0])
    t_star = float(estimate.t_grid[idx])
    p_at = float(estimate.p_hat[idx])
    if not p_at > 0:
        raise FptmcError("estimate at the splice time is not positive")
    eigen = principal_eigenvalue(model, n, mesh)
    lam = eigen.mu1
    log_c = math.log(p_at) - float(log_bm_fpt_density(model.x0, t_star)) + lam * t_star
    return TailModel(splice_time=t_star, decay_rate=lam, c_star=math.exp(log_c),
                     log_c_star=log_c, source=estimate, eigen=eigen)


def evaluate_mixture(tm: TailModel, t):
    """p_hat interpolated on the grid below the splice time, and
    c_star q_x(t) exp(-decay_rate t) at and beyond it."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    est = tm.source
    grid = np.concatenate([[0.0], est.t_grid])
    vals = np.concatenate([[0.0], est.p_hat])
    out = np.interp(t_arr, grid, vals)
    tail = t_arr >= tm.splice_time
    if tail.any():
        log_tail = (tm.log_c_star
                    + log_bm_fpt_density(est.x0, t_arr[tail])
                    - tm.decay_rate * t_arr[tail])
        out[tail] = np.exp(log_tail)
    return float(out[0]) if np.ndim(t) == 0 else out

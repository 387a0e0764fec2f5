"""Direct Monte-Carlo estimation of the first-passage density and its rate.

With one ensemble of N exact bridge paths and I_i(t) the per-path Simpson
value of int_0^1 gamma(|u x e1 + sqrt(t) beta_u|) du,

    p_hat(t)      = q_x(t) exp(-int_0^x a) * mean_i exp(-t I_i(t)),
    lambda_hat(t) = -(1/t) log( mean_i exp(-t I_i(t)) ),

where the mean over paths is always computed through a max-shifted
log-sum-exp, so very negative potentials cannot overflow. The same
ensemble serves the whole t-grid: the representation rescales one bridge
by sqrt(t), which also makes p_hat continuous in t by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bridge import BridgeEnsemble, functional_matrix, generate_ensemble, path_seed
from .errors import ConfigError
from .model import DriftModel, build_model, log_bm_fpt_density
from .quadrature import simpson_adaptive

__all__ = [
    "DensityEstimate",
    "RateCurve",
    "CovarianceDiagnostic",
    "ScalingTable",
    "EstimationRun",
    "run_estimation",
    "estimate_density",
    "estimate_rate",
    "ou_rate_estimator",
    "rate_bounds",
    "covariance_diagnostic",
    "convergence_scaling",
]


@dataclass(frozen=True)
class DensityEstimate:
    t_grid: np.ndarray
    p_hat: np.ndarray
    std_err: np.ndarray
    n_paths: int
    m: int
    base_seed: int
    prefactor_log: float
    x0: float


@dataclass(frozen=True)
class RateCurve:
    t_grid: np.ndarray
    lambda_hat: np.ndarray
    lower_bound: float
    upper_bound: float
    small_t_limit: float


@dataclass(frozen=True)
class CovarianceDiagnostic:
    times: np.ndarray
    covariance: np.ndarray  # over sqrt(N) (p_hat - p_ref) across replications
    pairs: list[tuple[float, float]]
    pair_values: np.ndarray
    n_paths: int
    replications: int


@dataclass(frozen=True)
class ScalingTable:
    n_values: np.ndarray
    rmse: np.ndarray  # of the max error over the t-grid, across seeds
    slope: float


@dataclass(frozen=True)
class EstimationRun:
    """Shared result of one ensemble pass: log of mean_i exp(-t I_i) and the
    max-shifted sample statistics needed for both views."""

    model: DriftModel
    t_grid: np.ndarray
    n_paths: int
    m: int
    base_seed: int
    log_mean: np.ndarray
    shift: np.ndarray
    shifted_std: np.ndarray

    def density(self) -> DensityEstimate:
        lq = log_bm_fpt_density(self.model.x0, self.t_grid)
        pref = self.model.prefactor_log
        p_hat = np.exp(lq + pref + self.log_mean)
        with np.errstate(divide="ignore"):
            log_se = (
                lq + pref + self.shift + np.log(self.shifted_std)
                - 0.5 * math.log(self.n_paths)
            )
        std_err = np.exp(log_se)
        std_err[self.shifted_std == 0.0] = 0.0
        return DensityEstimate(
            t_grid=self.t_grid, p_hat=p_hat, std_err=std_err,
            n_paths=self.n_paths, m=self.m, base_seed=self.base_seed,
            prefactor_log=pref, x0=self.model.x0,
        )

    def rate(self, kappa_search: tuple[float, float] = (1e-2, 1e3)) -> RateCurve:
        lam = -self.log_mean / self.t_grid
        lower, upper = rate_bounds(self.model, kappa_search)
        limit = small_t_rate_limit(self.model)
        return RateCurve(t_grid=self.t_grid, lambda_hat=lam,
                         lower_bound=lower, upper_bound=upper, small_t_limit=limit)


def _validate_grid(t_grid: np.ndarray) -> np.ndarray:
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if t_grid.ndim != 1 or len(t_grid) == 0:
        raise ConfigError("t grid must be a nonempty 1-d array")
    if np.any(t_grid <= 0) or np.any(np.diff(t_grid) <= 0):
        raise ConfigError("t grid must be strictly positive and increasing")
    return t_grid


def _check_radius_range(model: DriftModel, ensemble: BridgeEnsemble, t_max: float) -> None:
    if math.isinf(model.z_valid_max):
        return
    reach = model.x0 + math.sqrt(t_max) * float(ensemble.max_norm.max())
    if reach > model.z_valid_max:
        raise ConfigError(
            f"paths reach radius {reach:.3g} but the transformed drift is tabulated "
            f"only up to {model.z_valid_max:.3g}; rebuild the transform with a larger range"
        )


def run_estimation(
    model: DriftModel,
    t_grid,
    n_paths: int,
    m: int,
    base_seed: int,
    threads: int = 1,
    ensemble: BridgeEnsemble | None = None,
) -> EstimationRun:
    t_grid = _validate_grid(t_grid)
    if n_paths < 2:
        raise ConfigError("need at least two paths")
    if ensemble is None:
        ensemble = generate_ensemble(n_paths, m, base_seed)
    elif (ensemble.n_paths, ensemble.m) != (n_paths, m) or ensemble.base_seed != base_seed:
        raise ConfigError("supplied ensemble does not match (N, M, seed)")
    _check_radius_range(model, ensemble, float(t_grid[-1]))
    I = functional_matrix(ensemble, model.x0, t_grid, model.gamma_program, threads=threads)
    s = -t_grid[np.newaxis, :] * I
    shift = s.max(axis=0)
    w = np.exp(s - shift[np.newaxis, :])
    log_mean = shift + np.log(w.mean(axis=0))
    shifted_std = w.std(axis=0, ddof=1)
    return EstimationRun(
        model=model, t_grid=t_grid, n_paths=n_paths, m=m, base_seed=base_seed,
        log_mean=log_mean, shift=shift, shifted_std=shifted_std,
    )


def estimate_density(model, t_grid, n_paths, m, base_seed, *, threads=1, ensemble=None):
    """Density estimate on the grid, with per-t delta-method standard errors
    q_x(t) exp(-int a) * sd_i(exp(-t I_i)) / sqrt(N)."""
    return run_estimation(model, t_grid, n_paths, m, base_seed, threads, ensemble).density()


def estimate_rate(model, t_grid, n_paths, m, base_seed, *, threads=1, ensemble=None):
    """Rate curve lambda_hat from the same ensemble construction as the
    density, with the analytic bounds and the small-t limit attached."""
    return run_estimation(model, t_grid, n_paths, m, base_seed, threads, ensemble).rate()


def small_t_rate_limit(model: DriftModel) -> float:
    """(1/x) int_0^x gamma(u) du, the t -> 0 limit of the rate."""
    return simpson_adaptive(model.gamma, 0.0, model.x0, rtol=1e-10) / model.x0


# ---------------------------------------------------------------------------
# Rate estimator specialised to a(z) = -z via per-path moments
# ---------------------------------------------------------------------------

def ou_rate_estimator(x: float, t_grid, ensemble: BridgeEnsemble) -> RateCurve:
    """Rate curve for the linear drift a(z) = -z from per-path moments.

    For gamma(z) = (z^2 - 1)/2 the exponent is polynomial in the bridge:
      -t I_i(t) = t/2 - t x^2/6 - t^{3/2} x C_i - (t^2/2) A_i,
    with A_i = int |beta|^2 du and C_i = int u beta^(1) du (both Simpson on
    the ensemble grid), so

      lambda_hat(t) = x^2/6 - 1/2 - (1/t) log mean_i exp(-(t^2/2) A_i - t^{3/2} x C_i).

    Must agree with the generic estimator on the same ensemble to 1e-9.
    """
    t_grid = _validate_grid(t_grid)
    a_i = ensemble.squared_norm_integrals()
    c_i = ensemble.weighted_first_coord_integrals()
    t = t_grid[np.newaxis, :]
    s = -0.5 * t ** 2 * a_i[:, np.newaxis] - t ** 1.5 * x * c_i[:, np.newaxis]
    shift = s.max(axis=0)
    log_mean = shift + np.log(np.exp(s - shift[np.newaxis, :]).mean(axis=0))
    lam = x * x / 6.0 - 0.5 - log_mean / t_grid
    ou = build_model("-z", x)
    lower, upper = rate_bounds(ou)
    return RateCurve(t_grid=t_grid, lambda_hat=lam, lower_bound=lower,
                     upper_bound=upper, small_t_limit=small_t_rate_limit(ou))


# ---------------------------------------------------------------------------
# Analytic rate bounds
# ---------------------------------------------------------------------------

def rate_bounds(
    model: DriftModel,
    kappa_search: tuple[float, float] = (1e-2, 1e3),
    probe_max: float | None = None,
) -> tuple[float, float]:
    """(inf gamma, inf_kappa { m(kappa + x) + pi^2 / (2 kappa^2) }) with
    m(w) = max_{0<=z<=w} gamma(z) by grid scan (step 1e-3 w).

    The upper bound carries the +pi^2/(2 kappa^2) sign consistent with the
    large-t tube estimate -(1/t) log P[sqrt(t) max|beta| <= kappa] ->
    pi^2/(2 kappa^2). When the objective is still decreasing at the right
    end of the search interval (bounded potentials), the kappa -> infinity
    limit m(sup) is reported instead.
    """
    if probe_max is None:
        probe_max = max(10.0, 4.0 * model.x0)
    x = model.x0
    lower = float(np.min(model.gamma(np.linspace(0.0, probe_max, 20001))))

    def m_of(w: float) -> float:
        n = max(64, int(round(1.0 / 1e-3)))
        return float(np.max(model.gamma(np.linspace(0.0, w, n + 1))))

    def objective(kappa: float) -> float:
        return m_of(kappa + x) + math.pi ** 2 / (2.0 * kappa * kappa)

    k_lo, k_hi = kappa_search
    scan = np.geomspace(k_lo, k_hi, 65)
    vals = [objective(k) for k in scan]
    best = int(np.argmin(vals))
    if best == len(scan) - 1 and vals[-1] <= vals[-2]:
        # still decreasing: report the kappa -> infinity limit
        return lower, m_of(float(scan[-1]) + x)
    lo = scan[max(best - 1, 0)]
    hi = scan[min(best + 1, len(scan) - 1)]
    upper = _golden_min(objective, float(lo), float(hi))
    return lower, min(upper, float(vals[best]))


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_min(f, lo: float, hi: float, tol: float = 1e-10) -> float:
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol * max(1.0, abs(a) + abs(b)):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return min(fc, fd)


# ---------------------------------------------------------------------------
# Sampling diagnostics
# ---------------------------------------------------------------------------

def covariance_diagnostic(
    model: DriftModel,
    s_t_pairs: list[tuple[float, float]],
    n_paths: int,
    m: int,
    replications: int,
    base_seed: int,
    p_ref=None,
    threads: int = 1,
) -> CovarianceDiagnostic:
    """Empirical covariance of sqrt(N) (p_hat - p_ref) across independent
    replications, evaluated at the requested (s, t) pairs. Used to calibrate
    confidence intervals, not asserted against any closed form."""
    times = np.array(sorted({v for pair in s_t_pairs for v in pair}))
    if p_ref is None:
        ref = run_estimation(model, times, 100 * n_paths, m,
                             path_seed(base_seed, 1 << 32), threads).density().p_hat
    else:
        ref = np.asarray(p_ref(times), dtype=np.float64)
    devs = np.empty((replications, len(times)))
    for r in range(replications):
        est = estimate_density(model, times, n_paths, m, path_seed(base_seed, r),
                               threads=threads)
        devs[r] = math.sqrt(n_paths) * (est.p_hat - ref)
    cov = np.cov(devs, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    index = {t: i for i, t in enumerate(times)}
    pair_values = np.array([cov[index[s], index[t]] for s, t in s_t_pairs])
    return CovarianceDiagnostic(
        times=times, covariance=cov, pairs=list(s_t_pairs),
        pair_values=pair_values, n_paths=n_paths, replications=replications,
    )


def convergence_scaling(
    model: DriftModel,
    t_grid,
    n_list,
    replications: int,
    base_seed: int,
    p_ref,
    m: int = 200,
    threads: int = 1,
) -> ScalingTable:
    """RMSE (over seeds) of max_t |p_hat - p_ref| for each sample size, and
    the slope of log RMSE against log N."""
    t_grid = _validate_grid(t_grid)
    ref = np.asarray(p_ref(t_grid), dtype=np.float64)
    rmse = []
    for n in n_list:
        errs = []
        for r in range(replications):
            est = estimate_density(model, t_grid, int(n), m,
                                   path_seed(base_seed, 1000 * int(n) + r), threads=threads)
            errs.append(np.max(np.abs(est.p_hat - ref)))
        rmse.append(math.sqrt(float(np.mean(np.square(errs)))))
    n_arr = np.asarray(n_list, dtype=np.float64)
    rmse_arr = np.asarray(rmse)
    slope = float(np.polyfit(np.log(n_arr), np.log(rmse_arr), 1)[0])
    return ScalingTable(n_values=n_arr, rmse=rmse_arr, slope=slope)

import math

import numpy as np
import pytest
from scipy.linalg import eigvalsh_tridiagonal

import fptmc
from fptmc.errors import ConfigError, MeshConvergenceError
from fptmc.estimator import estimate_density
from fptmc.model import bm_fpt_density
from fptmc.tail import (
    _smallest_eigenvalue,
    build_tail,
    default_splice_time,
    evaluate_mixture,
    principal_eigenvalue,
)

PI2 = math.pi * math.pi


def test_sturm_bisection_matches_lapack():
    rng = np.random.default_rng(5)
    for _ in range(5):
        diag = rng.uniform(0.5, 3.0, 400)
        off = rng.uniform(-1.0, -0.1)
        mine = _smallest_eigenvalue(diag, off)
        ref = eigvalsh_tridiagonal(diag, np.full(399, off), select="i",
                                   select_range=(0, 0))[0]
        assert mine == pytest.approx(ref, abs=1e-9)


def test_zero_drift_unit_interval(zero_model):
    res = principal_eigenvalue(zero_model, 1.0, 2000)
    assert res.mu1 == pytest.approx(PI2 / 2.0, abs=1e-6)


def test_zero_drift_interval_scaling(zero_model):
    res = principal_eigenvalue(zero_model, 2.0, 2000)
    assert res.mu1 == pytest.approx(PI2 / 8.0, abs=1e-6)


def test_ou_eigenvalue_approaches_one(ou_model):
    res = principal_eigenvalue(ou_model, 8.0, 4000)
    assert res.mu1 == pytest.approx(1.0, abs=1e-3)


def test_domain_monotonicity(ou_model, zero_model):
    for model in (ou_model, zero_model):
        mus = [principal_eigenvalue(model, n, 1000).mu1 for n in (2.0, 4.0, 8.0)]
        assert mus[0] > mus[1] > mus[2]


def test_mesh_convergence_second_order(ou_model):
    r1 = principal_eigenvalue(ou_model, 8.0, 1000)
    r2 = principal_eigenvalue(ou_model, 8.0, 2000)
    gap1 = abs(r1.mu_coarse - r1.mu_fine)
    gap2 = abs(r2.mu_coarse - r2.mu_fine)
    assert gap1 / gap2 == pytest.approx(4.0, rel=0.2)
    # Richardson values stable between the two finest levels
    assert abs(r1.mu1 - r2.mu1) < 1e-8


def test_eigenfunction_positive_interior(ou_model):
    res = principal_eigenvalue(ou_model, 8.0, 500)
    interior = res.eigenfunction_samples[1:-1]
    assert np.all(interior > 0.0)
    assert res.eigenfunction_samples[0] == 0.0
    assert res.eigenfunction_samples[-1] == 0.0


def test_eigenfunction_matches_half_oscillator_ground_state(ou_model):
    # for gamma = (z^2-1)/2 the ground state is z exp(-z^2/2) (normalized)
    res = principal_eigenvalue(ou_model, 8.0, 1000)
    z = np.linspace(0.0, 8.0, len(res.eigenfunction_samples))
    ref = z * np.exp(-0.5 * z * z)
    ref /= math.sqrt(np.sum(ref * ref) * (z[1] - z[0]))
    assert np.max(np.abs(res.eigenfunction_samples - ref)) < 1e-4


def test_mesh_too_coarse_raises(ou_model):
    with pytest.raises(MeshConvergenceError):
        principal_eigenvalue(ou_model, 32.0, 100)


def test_mesh_minimum_enforced(ou_model):
    with pytest.raises(ConfigError):
        principal_eigenvalue(ou_model, 8.0, 50)


# --- mixture ------------------------------------------------------------------

@pytest.fixture(scope="module")
def ou_estimate(ou_model):
    grid = np.round(np.arange(1, 121) * 0.1, 10)  # 0.1 .. 12.0
    return estimate_density(ou_model, grid, 3000, 300, 77)


def test_build_tail_continuity(ou_model, ou_estimate):
    tm = build_tail(ou_model, ou_estimate, splice_time=6.0, n=8.0, mesh=1000)
    idx = np.argmin(np.abs(ou_estimate.t_grid - 6.0))
    # both branches agree at the splice point by construction of c_star
    tail_val = tm.c_star * bm_fpt_density(1.0, 6.0) * math.exp(-tm.decay_rate * 6.0)
    assert tail_val == pytest.approx(ou_estimate.p_hat[idx], rel=1e-9)
    assert evaluate_mixture(tm, 6.0) == pytest.approx(ou_estimate.p_hat[idx], rel=1e-9)


def test_mixture_formula_beyond_splice(ou_model, ou_estimate):
    tm = build_tail(ou_model, ou_estimate, splice_time=6.0, n=8.0, mesh=1000)
    t = 12.0
    expected = tm.c_star * bm_fpt_density(1.0, t) * math.exp(-tm.decay_rate * t)
    assert evaluate_mixture(tm, t) == pytest.approx(expected, rel=1e-12)


def test_mixture_interpolates_before_splice(ou_model, ou_estimate):
    tm = build_tail(ou_model, ou_estimate, splice_time=6.0, n=8.0, mesh=1000)
    grid, p = ou_estimate.t_grid, ou_estimate.p_hat
    t_mid = 0.5 * (grid[10] + grid[11])
    assert evaluate_mixture(tm, t_mid) == pytest.approx(0.5 * (p[10] + p[11]), rel=1e-12)


def test_mixture_rejects_negative_time(ou_model, ou_estimate):
    tm = build_tail(ou_model, ou_estimate, splice_time=6.0, n=8.0, mesh=1000)
    with pytest.raises(ValueError):
        evaluate_mixture(tm, -1.0)


def test_splice_must_be_grid_point(ou_model, ou_estimate):
    with pytest.raises(ConfigError):
        build_tail(ou_model, ou_estimate, splice_time=6.05, n=8.0, mesh=1000)


def test_default_splice_rule(ou_model, ou_estimate):
    t_star = default_splice_time(ou_estimate)
    assert t_star in ou_estimate.t_grid
    rel = ou_estimate.std_err / ou_estimate.p_hat
    idx = np.argmin(np.abs(ou_estimate.t_grid - t_star))
    assert rel[idx] > 0.15 or t_star == ou_estimate.t_grid[-1]
    if idx > 0:
        assert np.all(rel[:idx] <= 0.15)


def test_zero_drift_mixture_recovers_q(zero_model):
    # lambda = pi^2/(2 n^2) -> 0 for large n, so the spliced tail tends to
    # c q_x(t) with c -> 1: the mixture reproduces the Brownian law
    grid = np.linspace(0.5, 10.0, 20)
    est = estimate_density(zero_model, grid, 50, 50, 1)
    lam_prev = None
    for n in (8.0, 16.0, 32.0):
        tm = build_tail(zero_model, est, splice_time=grid[-1], n=n, mesh=1000)
        assert tm.decay_rate == pytest.approx(PI2 / (2 * n * n), rel=1e-4)
        if lam_prev is not None:
            assert tm.decay_rate < lam_prev
        lam_prev = tm.decay_rate
    tm = build_tail(zero_model, est, splice_time=grid[-1], n=64.0, mesh=1000)
    far = 30.0
    assert evaluate_mixture(tm, far) == pytest.approx(
        bm_fpt_density(1.0, far), rel=0.05)


def test_mixture_implied_rate_constant(ou_model, ou_estimate):
    # slope of -log(mixture/q) in t beyond the splice equals the eigenvalue,
    # while the raw estimator's rate keeps growing
    tm = build_tail(ou_model, ou_estimate, splice_time=6.0, n=8.0, mesh=1000)
    ts = np.linspace(8.0, 20.0, 25)
    neg_log = -(np.log(evaluate_mixture(tm, ts)) - np.log(bm_fpt_density(1.0, ts)))
    slope = np.polyfit(ts, neg_log, 1)[0]
    assert slope == pytest.approx(tm.decay_rate, abs=1e-9)

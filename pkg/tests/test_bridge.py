import math

import numpy as np
import pytest
from scipy.special import jv

import fptmc
from fptmc.bridge import (
    BridgeEnsemble,
    bessel_max_cdf,
    functional_matrix,
    generate_ensemble,
    load_ensemble,
    path_functional_I,
    path_seed,
    sample_bridge,
    save_ensemble,
    splitmix64,
)
from fptmc.errors import EvaluationError
from fptmc.expr import compile_program
from fptmc.quadrature import simpson_weights


def test_endpoints_pinned_exactly():
    p = sample_bridge(64, 12345)
    assert np.all(p.points[0] == 0.0)
    assert np.all(p.points[-1] == 0.0)


def test_bitwise_reproducible():
    a = sample_bridge(128, 777)
    b = sample_bridge(128, 777)
    assert np.array_equal(a.points, b.points)


def test_different_seeds_differ():
    a = sample_bridge(32, 1)
    b = sample_bridge(32, 2)
    assert not np.array_equal(a.points, b.points)


def test_splitmix_reference_values():
    # splitmix64 of 0 and 1 per the reference constants
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert splitmix64(1) == 0x910A2DEC89025CC1


def test_marginal_law():
    # Brownian-bridge marginal: each coordinate at u is N(0, u(1-u));
    # covariance between u=0.25 and u=0.75 is 0.25 * (1 - 0.75)
    n, m = 100000, 16
    ens = generate_ensemble(n, m, 99)
    u = ens.grid
    b1_mid = ens.g1[:, 8] / u[8]
    b1_25 = ens.g1[:, 4] / u[4]
    b1_75 = ens.g1[:, 12] / u[12]
    assert b1_mid.var() == pytest.approx(0.25, abs=0.005)
    assert np.cov(b1_25, b1_75)[0, 1] == pytest.approx(0.0625, abs=0.005)
    # |beta|^2 at u has mean 3 u (1-u)
    assert ens.g2[:, 8].mean() == pytest.approx(0.75, abs=0.01)


def test_ensemble_rows_match_single_paths():
    m = 40
    ens = generate_ensemble(10, m, 2024, chunk_size=3)
    for i in (0, 4, 9):
        p = ens.path(i)
        assert p.seed == path_seed(2024, i)
        g1 = p.grid * p.points[:, 0]
        g2 = np.einsum("kc,kc->k", p.points, p.points)
        assert np.array_equal(ens.g1[i], g1)
        assert np.array_equal(ens.g2[i], g2)


def test_ensemble_chunk_invariance():
    a = generate_ensemble(37, 20, 5, chunk_size=4)
    b = generate_ensemble(37, 20, 5, chunk_size=64)
    assert np.array_equal(a.g1, b.g1)
    assert np.array_equal(a.g2, b.g2)


def test_ensemble_requires_even_m():
    with pytest.raises(ValueError):
        generate_ensemble(5, 7, 1)


# --- bessel max law --------------------------------------------------------

def test_bessel_cdf_value_at_one():
    # frozen from the series with J_{3/2}(n pi)^2 = 2/(n pi^2)
    assert bessel_max_cdf(1.0) == pytest.approx(0.177923355643, abs=1e-9)


def test_bessel_cdf_against_bessel_function_route():
    # independent evaluation through scipy's J_{3/2}
    for y in (0.8, 1.0, 1.2, 1.5, 2.0):
        total = 0.0
        for n in range(1, 200):
            j = jv(1.5, n * math.pi)
            total += (n * math.pi) / (j * j) * math.exp(-math.pi**2 * n**2 / (2 * y * y))
        ref = (2.0 / y**3) * math.sqrt(2.0 / math.pi) * total
        assert bessel_max_cdf(y) == pytest.approx(ref, rel=1e-12)


def test_bessel_cdf_monotone_and_limits():
    ys = np.linspace(0.3, 4.0, 60)
    vals = [bessel_max_cdf(y) for y in ys]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert abs(bessel_max_cdf(10.0) - 1.0) < 1e-12
    assert bessel_max_cdf(0.01) < 1e-10
    with pytest.raises(ValueError):
        bessel_max_cdf(0.0)


def test_max_law_matched_at_fine_grid():
    # at M=8000 the grid max under-reads the continuous max by ~0.8/sqrt(M),
    # small enough to pass a 0.015 band at every probe
    ens = generate_ensemble(10000, 8000, 4242)
    for y in (0.8, 1.0, 1.2, 1.5):
        emp = float(np.mean(ens.max_norm <= y))
        assert abs(emp - bessel_max_cdf(y)) <= 0.015


def test_grid_max_deficit_shrinks_like_sqrt_m():
    devs = {}
    for m in (500, 8000):
        ens = generate_ensemble(8000, m, 777)
        devs[m] = float(np.mean(ens.max_norm <= 1.0)) - bessel_max_cdf(1.0)
    assert devs[500] > 0  # grid max under-reads, so the ECDF sits above
    assert devs[500] > 2.0 * devs[8000]  # expected factor 4 for a 16x finer grid


# --- path functional -------------------------------------------------------

def test_functional_zero_potential():
    p = sample_bridge(50, 3)
    assert path_functional_I(p, 1.0, 2.0, lambda r: np.zeros_like(r)) == 0.0


def test_functional_deterministic_at_t_zero():
    # at t = 0 the integrand is gamma(u x); for gamma = z^2 the Simpson value
    # is exactly x^2/3 (Simpson is exact on quadratics)
    p = sample_bridge(50, 3)
    val = path_functional_I(p, 2.0, 0.0, lambda r: r**2)
    assert val == pytest.approx(4.0 / 3.0, rel=1e-12)


def test_functional_ou_decomposition_identity():
    # for gamma = (z^2-1)/2:
    # t I(t) = (t^2/2) S_A + t^{3/2} x S_C + t x^2/6 - t/2, with S_A, S_C the
    # Simpson values of |beta|^2 and u beta^(1) on the same grid
    m = 200
    x, t = 1.3, 7.0
    ens = generate_ensemble(20, m, 11)
    w = simpson_weights(m, 1.0 / m)
    gamma = lambda r: (r**2 - 1.0) / 2.0
    for i in range(ens.n_paths):
        p = ens.path(i)
        I = path_functional_I(p, x, t, gamma)
        s_a = float(ens.g2[i] @ w)
        s_c = float(ens.g1[i] @ w)
        rhs = (t**2 / 2) * s_a + t**1.5 * x * s_c + t * x * x / 6.0 - t / 2.0
        assert abs(t * I - rhs) < 1e-10


def test_functional_propagates_evaluation_failure():
    p = sample_bridge(20, 3)
    with pytest.raises(EvaluationError, match="radius"):
        path_functional_I(p, 1.0, 1.0, lambda r: np.log(r))  # -inf at radius 0


def test_functional_matrix_matches_per_path():
    ens = generate_ensemble(15, 60, 21)
    prog = compile_program(fptmc.build_model("-z", 1.0).gamma_expr)
    ts = np.array([0.5, 2.0])
    I = functional_matrix(ens, 1.0, ts, prog)
    gamma = lambda r: (r**2 - 1.0) / 2.0
    for i in (0, 7, 14):
        for j, t in enumerate(ts):
            ref = path_functional_I(ens.path(i), 1.0, float(t), gamma)
            assert I[i, j] == pytest.approx(ref, rel=1e-12)


def test_functional_matrix_thread_invariance():
    ens = generate_ensemble(2100, 64, 9)
    prog = compile_program(fptmc.build_model("-z", 1.0).gamma_expr)
    ts = np.linspace(0.2, 3.0, 7)
    a = functional_matrix(ens, 1.0, ts, prog, threads=1)
    b = functional_matrix(ens, 1.0, ts, prog, threads=4)
    assert np.array_equal(a, b)


def test_quadrature_mse_slope():
    # per-path mean-squared deviation of the Simpson functional against a
    # 16x-finer reference decays like M^-2 (log-log slope in [-2.5, -1.5])
    m_ref = 2048
    ens = generate_ensemble(1500, m_ref, 31415)
    prog = compile_program(fptmc.build_model("-z", 1.0).gamma_expr)
    t = np.array([2.0])

    def I_sub(stride):
        sub = BridgeEnsemble(
            n_paths=ens.n_paths, m=m_ref // stride, base_seed=ens.base_seed,
            g1=np.ascontiguousarray(ens.g1[:, ::stride]),
            g2=np.ascontiguousarray(ens.g2[:, ::stride]),
            max_norm=ens.max_norm,
        )
        return functional_matrix(sub, 1.0, t, prog)[:, 0]

    i_ref = I_sub(1)
    ms = np.array([16, 32, 64, 128])
    mse = [np.mean((I_sub(m_ref // m) - i_ref) ** 2) for m in ms]
    slope = np.polyfit(np.log(ms), np.log(mse), 1)[0]
    assert -2.5 <= slope <= -1.5


# --- binary dump ------------------------------------------------------------

def test_ensemble_dump_roundtrip(tmp_path):
    ens = generate_ensemble(12, 30, 314)
    path = tmp_path / "ens.bin"
    save_ensemble(ens, str(path))
    back = load_ensemble(str(path))
    assert (back.n_paths, back.m, back.base_seed) == (12, 30, 314)
    assert np.array_equal(back.g1, ens.g1)
    assert np.array_equal(back.g2, ens.g2)
    assert np.array_equal(back.max_norm, ens.max_norm)


def test_ensemble_dump_rejects_garbage(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not an ensemble")
    with pytest.raises(fptmc.FptmcError):
        load_ensemble(str(path))

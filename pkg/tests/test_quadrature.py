import math

import numpy as np
import pytest

from fptmc.errors import QuadratureError
from fptmc.quadrature import cumulative_simpson, simpson_adaptive, simpson_weights


def test_weights_sum_to_length():
    w = simpson_weights(10, 0.1)
    assert w.sum() == pytest.approx(1.0, rel=1e-14)


def test_weights_reject_odd():
    with pytest.raises(ValueError):
        simpson_weights(5, 0.1)


def test_exact_on_cubics():
    # composite Simpson integrates cubics exactly
    val = simpson_adaptive(lambda z: z**3 - 2 * z, 0.0, 2.0)
    assert val == pytest.approx(0.0, abs=1e-13)


def test_adaptive_matches_analytic():
    val = simpson_adaptive(np.exp, 0.0, 1.0, rtol=1e-12)
    assert val == pytest.approx(math.e - 1.0, rel=1e-11)


def test_adaptive_zero_interval():
    assert simpson_adaptive(np.exp, 1.0, 1.0) == 0.0


def test_adaptive_raises_on_rough_integrand():
    rng = np.random.default_rng(0)

    def noisy(z):
        return rng.standard_normal(np.shape(z))

    with pytest.raises(QuadratureError):
        simpson_adaptive(noisy, 0.0, 1.0, rtol=1e-12, max_doublings=6)


def test_cumulative_matches_antiderivative():
    grid = np.linspace(0.0, 2.0, 41)
    vals = cumulative_simpson(np.exp, grid)
    assert np.allclose(vals, np.exp(grid) - 1.0, rtol=1e-8)
    # locally fourth order: halving the step cuts the error ~16x
    fine = cumulative_simpson(np.exp, np.linspace(0.0, 2.0, 81))
    err_c = abs(vals[-1] - (np.exp(2.0) - 1.0))
    err_f = abs(fine[-1] - (np.exp(2.0) - 1.0))
    assert err_c / err_f == pytest.approx(16.0, rel=0.3)

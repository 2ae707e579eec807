"""Gauss-Hermite quadrature against the standard normal."""

import math

import numpy as np
import pytest

from poisonlab import gh_expect, standard_normal_nodes

# E[xi^k] for xi ~ N(0,1): odd moments vanish, even are double factorials.
STANDARD_MOMENTS = {0: 1.0, 1: 0.0, 2: 1.0, 3: 0.0, 4: 3.0, 5: 0.0, 6: 15.0, 7: 0.0, 8: 105.0}


def test_nodes_normalized():
    x, w = standard_normal_nodes(100)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert abs(float(w @ x)) < 1e-13


def test_standard_moments_exact():
    for k, expected in STANDARD_MOMENTS.items():
        val = gh_expect(lambda t, k=k: t**k, 0.0, 1.0, nodes=100)
        assert val == pytest.approx(expected, abs=1e-12), k


def test_shifted_scaled_second_moment():
    # E[(M + sigma xi)^2] = M^2 + sigma^2
    val = gh_expect(lambda t: t**2, 1.7, 2.3, nodes=50)
    assert val == pytest.approx(1.7**2 + 2.3**2, rel=1e-13)


def test_polynomial_exactness_random_coefficients():
    rng = np.random.default_rng(5)
    coeffs = rng.standard_normal(7)
    mean, sigma = 0.4, 1.2
    # closed form via binomial expansion against standard moments
    expected = 0.0
    for k, c in enumerate(coeffs):
        for j in range(k + 1):
            expected += (
                c
                * math.comb(k, j)
                * mean ** (k - j)
                * sigma**j
                * STANDARD_MOMENTS[j]
            )
    val = gh_expect(lambda t: sum(c * t**k for k, c in enumerate(coeffs)), mean, sigma, nodes=40)
    assert val == pytest.approx(expected, rel=1e-12)


def test_sigma_zero_degenerates():
    assert gh_expect(lambda t: np.cos(t), 0.3, 0.0) == pytest.approx(math.cos(0.3), rel=1e-15)


def test_single_node_returns_mean_value():
    assert gh_expect(lambda t: t + 1.0, 2.0, 1.0, nodes=1) == pytest.approx(3.0, abs=1e-14)


def test_node_count_stability_on_smooth_integrand():
    # Logistic-type integrands are analytic; 100 vs 200 nodes must agree
    # far below solver tolerance.
    from scipy.special import expit

    for mean, sigma in [(0.0, 1.0), (2.0, 0.5), (-3.0, 2.0)]:
        a = gh_expect(lambda t: expit(-t), mean, sigma, nodes=100)
        b = gh_expect(lambda t: expit(-t), mean, sigma, nodes=200)
        assert a == pytest.approx(b, abs=1e-12)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        gh_expect(lambda t: t, 0.0, -1.0)
    with pytest.raises(ValueError):
        gh_expect(lambda t: t, math.nan, 1.0)
    with pytest.raises(ValueError):
        standard_normal_nodes(0)


def test_gaussian_cdf_integrand():
    # E[1{xi <= c}] is not smooth, but E[Phi-like smooth sigmoids] of a
    # normal have closed forms: E[exp(s xi)] = exp(s^2 / 2).
    val = gh_expect(lambda t: np.exp(0.7 * t), 0.0, 1.0, nodes=100)
    assert val == pytest.approx(math.exp(0.7**2 / 2), rel=1e-12)

"""Tests for exact laws and special functions, against quadrature oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad

from besselweld.rng_bridge import KeyedStream, PathSeed
from besselweld.special_fn import (
    InverseGammaParams,
    bessel_k1,
    gamma_sample,
    hitting_law,
    inverse_gamma_cdf,
    inverse_gamma_mean,
    inverse_gamma_pdf,
    inverse_gamma_sample,
    k1_log_limit_statistic,
    laplace_inverse_gamma,
    regularized_gamma_q,
)

IG_1_HALF = InverseGammaParams(1.0, 0.5)


def test_params_validation():
    with pytest.raises(ValueError):
        InverseGammaParams(0.0, 1.0)
    with pytest.raises(ValueError):
        InverseGammaParams(1.0, -1.0)
    with pytest.raises(ValueError):
        hitting_law(2.0)


def test_hitting_law_mapping():
    p = hitting_law(-2.0)
    assert p.alpha == 2.0 and p.beta == 0.5
    assert hitting_law(0.0).alpha == 1.0


def test_pdf_known_value_and_tail():
    # alpha=1, beta=1/2 at t=1: 0.5 * exp(-0.5)
    assert inverse_gamma_pdf(IG_1_HALF, 1.0) == pytest.approx(
        0.5 * math.exp(-0.5), rel=1e-14
    )
    assert inverse_gamma_pdf(IG_1_HALF, 1e12) < 1e-9
    assert inverse_gamma_pdf(IG_1_HALF, 0.0) == 0.0
    assert inverse_gamma_pdf(IG_1_HALF, -1.0) == 0.0


def test_pdf_normalizes_by_quadrature():
    for p in (IG_1_HALF, InverseGammaParams(1.5, 0.5), InverseGammaParams(2.0, 0.5)):
        total, err = quad(
            lambda t: inverse_gamma_pdf(p, t), 0.0, np.inf, limit=400
        )
        assert abs(total - 1.0) < 1e-6


def test_cdf_closed_forms():
    # alpha=1: exp(-beta/t)
    assert inverse_gamma_cdf(IG_1_HALF, 1.0) == pytest.approx(
        math.exp(-0.5), abs=1e-12
    )
    for t in (0.1, 0.5, 2.0, 20.0):
        assert inverse_gamma_cdf(IG_1_HALF, t) == pytest.approx(
            math.exp(-0.5 / t), abs=1e-12
        )
    # alpha=2: (1+z) exp(-z) with z = beta/t
    p2 = InverseGammaParams(2.0, 0.5)
    for t in (0.2, 1.0, 5.0):
        z = 0.5 / t
        assert inverse_gamma_cdf(p2, t) == pytest.approx(
            (1.0 + z) * math.exp(-z), abs=1e-12
        )
    assert inverse_gamma_cdf(IG_1_HALF, 0.0) == 0.0
    assert inverse_gamma_cdf(IG_1_HALF, 1e9) == pytest.approx(1.0, abs=1e-9)


def test_cdf_matches_pdf_quadrature():
    p = InverseGammaParams(1.5, 0.5)
    for t in (0.3, 1.0, 4.0):
        ref, _ = quad(lambda u: inverse_gamma_pdf(p, u), 0.0, t, limit=400)
        assert abs(inverse_gamma_cdf(p, t) - ref) < 1e-8


def test_cdf_pdf_derivative_consistency():
    rng = np.random.default_rng(5)
    p = InverseGammaParams(1.7, 0.5)
    for t in rng.uniform(0.2, 5.0, size=100):
        h = 1e-5 * t
        num = (inverse_gamma_cdf(p, t + h) - inverse_gamma_cdf(p, t - h)) / (2 * h)
        assert abs(num - inverse_gamma_pdf(p, t)) < 1e-5


def test_regularized_gamma_q_edges():
    assert regularized_gamma_q(1.0, 0.0) == 1.0
    assert regularized_gamma_q(1.0, 1.0) == pytest.approx(math.exp(-1.0), rel=1e-13)
    with pytest.raises(ValueError):
        regularized_gamma_q(-1.0, 1.0)
    with pytest.raises(ValueError):
        regularized_gamma_q(1.0, -0.5)


def test_sampler_positive_and_reproducible():
    s1 = KeyedStream(PathSeed(1000), substream=1)
    s2 = KeyedStream(PathSeed(1000), substream=1)
    a = inverse_gamma_sample(IG_1_HALF, s1, 5000)
    b = inverse_gamma_sample(IG_1_HALF, s2, 5000)
    assert np.array_equal(a, b)
    assert (a > 0.0).all()


def test_sampler_matches_cdf_alpha_grid():
    points = [0.25, 0.5, 1.0, 2.0, 5.0]
    n = 100_000
    for i, alpha in enumerate([1.0, 1.5, 2.0, 3.0]):
        p = InverseGammaParams(alpha, 0.5)
        stream = KeyedStream(PathSeed(2000), substream=i)
        draws = inverse_gamma_sample(p, stream, n)
        for t in points:
            emp = float((draws <= t).mean())
            ref = inverse_gamma_cdf(p, t)
            se = math.sqrt(max(ref * (1.0 - ref), 1e-12) / n)
            assert abs(emp - ref) < 3.0 * se + 1e-4


def test_sampler_mean_alpha_two():
    p = InverseGammaParams(2.0, 0.5)
    draws = inverse_gamma_sample(p, KeyedStream(PathSeed(3000)), 100_000)
    se = draws.std() / math.sqrt(draws.size)
    assert abs(draws.mean() - inverse_gamma_mean(p)) < 3.0 * se


def test_sampler_scaling_law():
    # c * IG(alpha, beta) has the law of IG(alpha, c beta)
    p = InverseGammaParams(1.5, 0.5)
    c = 3.0
    draws = c * inverse_gamma_sample(p, KeyedStream(PathSeed(4000)), 50_000)
    scaled = InverseGammaParams(1.5, c * 0.5)
    for t in (0.5, 1.5, 6.0):
        emp = float((draws <= t).mean())
        ref = inverse_gamma_cdf(scaled, t)
        se = math.sqrt(ref * (1.0 - ref) / draws.size)
        assert abs(emp - ref) < 3.0 * se + 1e-4


def test_gamma_sampler_small_alpha_boost():
    draws = gamma_sample(0.5, KeyedStream(PathSeed(5000)), 50_000)
    assert (draws >= 0.0).all()
    # mean alpha, variance alpha
    assert abs(draws.mean() - 0.5) < 3.0 * draws.std() / math.sqrt(draws.size)


def test_gamma_sampler_rejects_bad_args():
    with pytest.raises(ValueError):
        gamma_sample(0.0, KeyedStream(PathSeed(1)), 10)
    with pytest.raises(ValueError):
        gamma_sample(1.0, KeyedStream(PathSeed(1)), -1)


def test_infinite_mean_flag():
    assert inverse_gamma_mean(IG_1_HALF) == math.inf
    assert inverse_gamma_mean(InverseGammaParams(2.0, 0.5)) == 0.5


def test_k1_against_quadrature():
    # K1(x) = int_0^inf exp(-x cosh u) cosh u du; the integrand is
    # negligible once x cosh u > 745, i.e. beyond u ~ log(1500/x)
    def oracle(x: float) -> float:
        upper = math.log(1500.0 / x) + 5.0
        val, err = quad(
            lambda u: math.exp(-x * math.cosh(u)) * math.cosh(u),
            0.0,
            upper,
            limit=500,
            epsabs=0.0,
            epsrel=1e-12,
        )
        return val

    xs = np.concatenate(
        [
            np.linspace(0.05, 1.9, 8),
            [1.999, 2.0, 2.001],
            np.linspace(2.5, 20.0, 9),
        ]
    )
    assert xs.size == 20
    for x in xs:
        ref = oracle(float(x))
        assert abs(bessel_k1(float(x)) - ref) / ref < 1e-8


def test_k1_small_argument_and_monotone():
    assert abs(1e-4 * bessel_k1(1e-4) - 1.0) < 1e-4
    grid = np.linspace(0.01, 20.0, 1000)
    vals = [bessel_k1(float(x)) for x in grid]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        bessel_k1(0.0)


def test_laplace_transform_endpoints_and_monotone():
    assert laplace_inverse_gamma(0.0) == 1.0
    assert abs(laplace_inverse_gamma(1e-8) - 1.0) < 1e-3
    ts = np.linspace(0.01, 10.0, 200)
    vals = [laplace_inverse_gamma(float(t)) for t in ts]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        laplace_inverse_gamma(-1.0)


def test_laplace_transform_matches_sampler():
    draws = inverse_gamma_sample(IG_1_HALF, KeyedStream(PathSeed(6000)), 100_000)
    for t in (0.1, 1.0, 10.0):
        emp = np.exp(-t * draws)
        se = emp.std() / math.sqrt(emp.size)
        assert abs(emp.mean() - laplace_inverse_gamma(t)) < 3.0 * se


def test_k1_limit_statistic_converges_to_half():
    # the approach to 1/2 is logarithmically slow; bands derived from
    # direct evaluation of the statistic itself
    xs = [1e-1, 1e-2, 1e-3, 1e-4]
    dists = [abs(k1_log_limit_statistic(x) - 0.5) for x in xs]
    assert dists == sorted(dists, reverse=True)
    assert dists[1] < 0.25
    assert dists[2] < 0.15
    assert dists[3] < 0.11
    with pytest.raises(ValueError):
        k1_log_limit_statistic(1.5)
    with pytest.raises(ValueError):
        k1_log_limit_statistic(0.0)

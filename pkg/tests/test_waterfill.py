import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ris_keygen.channel import CorrelationModel
from ris_keygen.skr import NoiseScales, skr_analytic, skr_from_powers
from ris_keygen.waterfill import (bisection_solve, build_W, concavity_threshold, design_budget,
                                  rate_derivative, rate_function, rate_second_derivative,
                                  water_fill)

from conftest import grid_optimum, random_psd


def test_design_budget():
    assert design_budget(16, 32, 2) == 17 * 32 * 2
    assert design_budget(16, 17, 2) == 578


def test_derivative_matches_finite_difference(unit_noise):
    h = 1e-5
    fd = (skr_from_powers([1 + h], unit_noise) - skr_from_powers([1 - h], unit_noise)) / (2 * h)
    assert abs(rate_function(1.0, 1.0, unit_noise) - fd) < 1e-6
    assert abs(rate_derivative(1.0, unit_noise) - fd) < 1e-6


def test_second_derivative_matches_finite_difference():
    ns = NoiseScales(0.3, 2.0)
    for p in (0.05, 0.4, 3.0):
        h = 1e-4 * p
        fd = (rate_derivative(p + h, ns) - rate_derivative(p - h, ns)) / (2 * h)
        assert np.isclose(rate_second_derivative(p, ns), fd, rtol=1e-5)


def test_rate_function_limits(unit_noise):
    assert rate_function(0.0, 1.0, unit_noise) == 0.0
    assert rate_function(1e9, 1.0, unit_noise) < 1e-8


def test_concavity_threshold_sign_flip(unit_noise):
    p_co = concavity_threshold(unit_noise)
    assert p_co > 0
    assert rate_second_derivative(p_co - 1e-6, unit_noise) > 0
    assert rate_second_derivative(p_co + 1e-6, unit_noise) < 0
    # equal noise: p_co = sigma^2 / sqrt(2)
    assert np.isclose(p_co, 1 / np.sqrt(2), rtol=1e-10)


def test_concavity_threshold_shrinks_with_noise():
    vals = [concavity_threshold(NoiseScales(s, s)) for s in (1.0, 1e-3, 1e-6)]
    assert vals[0] > vals[1] > vals[2] > 0


def test_equal_eigenvalues_equal_allocation(unit_noise):
    alloc = water_fill(np.full(6, 2.0), 30.0, unit_noise)
    assert np.allclose(alloc.p, 2.0 * 30.0 / 6, rtol=1e-10)


def test_single_channel_takes_budget(unit_noise):
    p, mu = bisection_solve(np.array([3.0]), 5.0, unit_noise, np.array([True]))
    assert np.isclose(p[0], 15.0, rtol=1e-12)


def test_bisection_monotone_in_mu(unit_noise):
    p_h = np.array([3.0, 1.0])
    p_co = concavity_threshold(unit_noise)
    lo = bisection_solve(p_h, 10.0, unit_noise, np.array([True, True]))[0]
    hi = bisection_solve(p_h, 20.0, unit_noise, np.array([True, True]))[0]
    # a larger budget corresponds to a lower water level and more power
    assert np.all(hi > lo) and np.all(lo >= p_co * p_h - 1e-15)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_kkt_certificate(seed):
    rng = np.random.default_rng(seed)
    D = int(rng.integers(1, 20))
    p_h = np.sort(rng.lognormal(0, 2, D))[::-1]
    ns = NoiseScales(*rng.lognormal(0, 1, 2))
    p_co = concavity_threshold(ns)
    budget = D * p_co * rng.uniform(1.01, 50)
    alloc = water_fill(p_h, budget, ns)
    r_mu, r_in, r_b = alloc.kkt_residuals(ns)
    assert r_mu <= 1e-8 and r_in == 0.0 and r_b <= 1e-6 * budget
    assert np.all(alloc.p[alloc.active] >= p_co * p_h[alloc.active] * (1 - 1e-12))


@pytest.mark.parametrize("D", [2, 3])
def test_grid_search_optimality(D):
    rng = np.random.default_rng(3 + D)
    for _ in range(8):
        p_h = np.sort(rng.lognormal(0, 1, D))[::-1]
        ns = NoiseScales(*rng.lognormal(0, 1, 2))
        p_co = concavity_threshold(ns)
        budget = rng.uniform(1.5, 20) * D * p_co
        grid = grid_optimum(p_h, budget, ns, p_co)
        assert water_fill(p_h, budget, ns).skr(ns) >= grid - 1e-2


def test_skr_nondecreasing_in_budget():
    rng = np.random.default_rng(8)
    p_h = np.sort(rng.lognormal(0, 1, 6))[::-1]
    ns = NoiseScales(0.2, 0.9)
    vals = [water_fill(p_h, b, ns).skr(ns) for b in np.linspace(10, 100, 10)]
    assert np.all(np.diff(vals) >= -1e-12)


def test_deterministic():
    p_h = np.array([5.0, 2.0, 0.5])
    ns = NoiseScales(0.3, 0.4)
    a, b = water_fill(p_h, 12.0, ns), water_fill(p_h, 12.0, ns)
    assert np.array_equal(a.p, b.p) and a.mu == b.mu


def test_infeasible_budget_raises(unit_noise):
    with pytest.raises(ValueError):
        water_fill(np.array([1.0, 1.0]), 0.1 * concavity_threshold(unit_noise), unit_noise)
    with pytest.raises(ValueError):
        water_fill(np.array([1.0, 2.0]), 1.0, unit_noise)


def test_build_W_identity_covariance(unit_noise):
    D, budget = 4, 20.0
    corr = CorrelationModel(np.eye(1), np.eye(1), np.eye(D))
    alloc = water_fill(np.ones(D), budget, unit_noise)
    W = build_W(alloc, corr).W
    assert np.allclose(np.abs(W), np.sqrt(budget / D) * np.abs(corr.U_h))
    assert np.allclose(W.conj().T @ W, budget / D * np.eye(D))


def test_build_W_realizes_allocation(rng):
    D = 6
    corr = CorrelationModel(np.eye(1), np.eye(1), random_psd(rng, D))
    ns = NoiseScales(0.5, 0.5)
    alloc = water_fill(corr.p_h, 40.0, ns)
    design = build_W(alloc, corr, cols=8, noise=ns)
    RW = design.W.T @ corr.R_h @ design.W.conj()
    assert design.W.shape == (D, 8)
    assert np.allclose(np.sort(np.linalg.eigvalsh(RW))[::-1][:D], np.sort(alloc.p)[::-1], atol=1e-8)
    assert np.isclose(design.achieved_skr, skr_from_powers(alloc.p, ns), rtol=1e-8)
    assert np.isclose(np.linalg.norm(design.W) ** 2, alloc.budget_used(), rtol=1e-10)
    assert np.isclose(skr_analytic(design.W, corr, ns), alloc.skr(ns), rtol=1e-8)

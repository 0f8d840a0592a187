import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynverify.consistency import ConsistencyFit, FitError, NonConformingPool, fit_consistency, optimal_alpha
from dynverify.explore import DEFAULT_ALPHAS
from dynverify.rng import stream


def _samples(a, b, alphas=DEFAULT_ALPHAS, noise=0.0, g=None):
    return [(x, b - a / x + (noise * g.standard_normal() if noise else 0.0)) for x in alphas]


def test_exact_samples_are_recovered():
    fit = fit_consistency(_samples(0.003, 0.94))
    assert fit.a == pytest.approx(0.003, abs=1e-9) and fit.b == pytest.approx(0.94, abs=1e-9)


def test_two_points_suffice():
    fit = fit_consistency([(0.1, 0.9), (0.5, 0.98)])
    assert fit(0.1) == pytest.approx(0.9) and fit(0.5) == pytest.approx(0.98)


def test_noisy_fit_stays_close():
    g = stream(0, "fit")
    est = [fit_consistency(_samples(0.007, 0.95, noise=0.002, g=g)).a for _ in range(200)]
    within = np.mean(np.abs(np.array(est) / 0.007 - 1) <= 0.2)
    assert within >= 0.95


def test_too_few_samples():
    with pytest.raises(FitError):
        fit_consistency([(0.5, 0.9)])
    with pytest.raises(FitError):
        fit_consistency([(0.5, 0.9), (0.5, 0.8)])


def test_falling_consistency_is_rejected():
    with pytest.raises(NonConformingPool):
        fit_consistency([(0.1, 0.99), (0.5, 0.9), (1.0, 0.8)])
    with pytest.raises(NonConformingPool):
        ConsistencyFit(-0.1, 0.9)


@pytest.mark.parametrize("a,want", [(0.003, 0.1145), (0.007, 0.1518)])
def test_optimal_alpha_values(a, want):
    alpha, _ = optimal_alpha(ConsistencyFit(a, 0.95))
    assert alpha == pytest.approx(want, abs=1e-3)


def test_optimal_alpha_of_exact_cube():
    assert optimal_alpha(ConsistencyFit(0.016, 0.95))[0] == pytest.approx(0.2, abs=1e-12)


def test_optimum_is_clamped_into_valid_range():
    assert optimal_alpha(ConsistencyFit(0.5, 0.6))[0] == pytest.approx(0.5 / 0.6)
    assert optimal_alpha(ConsistencyFit(3.0, 3.5))[0] == 1.0


@given(st.floats(0.0005, 0.1), st.floats(0.8, 1.0))
def test_grid_minimum_agrees_with_closed_form(a, b):
    fit = fit_consistency(_samples(a, b))
    grid = np.arange(1, 201) * 0.005
    grid = grid[grid >= a / b]
    cost = grid**2 + 1 + a / grid - b
    best = grid[np.argmin(cost)]
    alpha, predicted = optimal_alpha(fit)
    assert abs(best - alpha) <= 0.005 + 1e-12
    assert predicted <= cost.min() + 1e-9

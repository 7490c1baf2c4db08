import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlmv.errors import NumericalError
from nlmv.frontier import efficient_policy
from nlmv.model import MarketModel, TimeGrid, discount_factor
from nlmv.policy import (FeedbackPolicy, optimal_cost, optimal_portfolio, simulate_wealth,
                         write_terminal_csv)
from nlmv.riccati import solve_riccati_ode

D_STAR_A = 2.8040957301774427


class LinearGainPolicy:
    """pi = a Y^+ + b Y^- around target d (for admissible-policy comparisons)."""

    def __init__(self, a, b, d_value):
        self.a, self.b, self.d_value = a, b, d_value

    def portfolio(self, k, X, y, discount):
        Y = X - self.d_value * discount
        return (self.a * np.maximum(Y, 0) + self.b * np.maximum(-Y, 0))[:, None], 0


def _policy(model, grid, d):
    return FeedbackPolicy(d, solve_riccati_ode(model, 1, grid), solve_riccati_ode(model, 2, grid),
                          model)


def test_zero_portfolio_on_boundary(model_a, grid_a):
    pol = _policy(model_a, grid_a, 2.0)
    X = 2.0 * discount_factor(model_a, 0.3, 1.0)
    np.testing.assert_allclose(optimal_portfolio(pol, 0.3, X), 0.0, atol=1e-15)


def test_model_a_initial_portfolio(model_a, grid_a):
    pol = _policy(model_a, grid_a, D_STAR_A)
    pi = optimal_portfolio(pol, 0.0, 1.0)
    assert pi[0] == pytest.approx(1.72122, abs=1e-5)
    gap = 1.0 - D_STAR_A * np.exp(-0.03)
    assert pi[0] == pytest.approx(-1.0 * gap, rel=1e-10)  # pi2 = theta_lower / sigma = 1


def test_zero_premium_gives_zero_policy(grid_a):
    m = MarketModel.constant(0.03, [0.0], [0.0], [[0.2]])
    pol = _policy(m, grid_a, 1.5)
    for t, X in [(0.0, 1.0), (0.5, 3.0), (0.9, -2.0)]:
        np.testing.assert_array_equal(optimal_portfolio(pol, t, X), [0.0])
    rep, XT = simulate_wealth(m, pol, 1.0, grid_a, 1000, seed=1, return_terminal=True)
    np.testing.assert_allclose(XT, np.exp(0.03), rtol=1e-13)
    assert rep.variance == pytest.approx(0.0, abs=1e-25)


def test_optimal_cost_examples():
    rho = np.exp(-0.03)
    assert optimal_cost(0.9, 1.02, 1.0, 1 / rho, rho) == 0.0
    assert optimal_cost(np.exp(-0.1), np.exp(0.02), 1.0, D_STAR_A, rho) == \
        pytest.approx(3.02245, abs=1e-4)
    assert optimal_cost(0.9, 1.1, 1.0, 0.0, rho) == pytest.approx(0.9)
    with pytest.raises(ValueError):
        optimal_cost(0.0, 1.0, 1.0, 0.0, rho)


def test_two_period_toy_cannot_beat_cost(model_a):
    # with d = 0 and x0 = 1 the optimal cost is P1(0); no linear feedback on a
    # two-step grid may do better than it beyond Monte Carlo noise
    P1 = solve_riccati_ode(model_a, 1, TimeGrid(1.0, 200)).P0
    grid = TimeGrid(1.0, 2)
    best = np.inf
    for a in np.linspace(-20, 5, 26):
        rep = simulate_wealth(model_a, LinearGainPolicy(a, 0.0, 0.0), 1.0, grid, 40_000, seed=11)
        best = min(best, rep.mean_sq_dev)
        assert rep.mean_sq_dev >= P1 - 3 * rep.se_mean_sq_dev
    assert best > P1


def test_cost_attained_by_optimal_policy(model_a, grid_a):
    pol = _policy(model_a, grid_a, D_STAR_A)
    rep = simulate_wealth(model_a, pol, 1.0, grid_a, 40_000, seed=5)
    cost = optimal_cost(pol.sol1.P0, pol.sol2.P0, 1.0, D_STAR_A, np.exp(-0.03))
    assert abs(rep.mean_sq_dev - cost) <= max(3 * rep.se_mean_sq_dev, 0.02 * cost)
    for a, b in [(0.0, 0.5), (0.0, 1.5), (-1.0, 0.8)]:
        other = simulate_wealth(model_a, LinearGainPolicy(a, b, D_STAR_A), 1.0, grid_a, 40_000,
                                seed=5)
        assert other.mean_sq_dev >= cost - 3 * other.se_mean_sq_dev


@settings(max_examples=8)
@given(st.floats(0.1, 10.0))
def test_y_homogeneity(alpha):
    m = MarketModel.constant(0.03, [0.2], [0.4], [[0.2]])
    grid = TimeGrid(1.0, 20)
    d = 3.0
    rho = discount_factor(m, 0.0, 1.0)
    pol = _policy(m, grid, d)
    y0 = 1.0 - d * rho
    _, p1 = simulate_wealth(m, pol, 1.0, grid, 500, seed=2, return_paths=True)
    _, p2 = simulate_wealth(m, pol, d * rho + alpha * y0, grid, 500, seed=2, return_paths=True)
    np.testing.assert_allclose(p2, alpha * p1, rtol=1e-11, atol=1e-13)


def test_sign_invariance_both_sides(model_a):
    grid = TimeGrid(1.0, 50)
    pol = _policy(model_a, grid, 0.5)  # x0 above d e^{-int r}: Y stays nonnegative
    _, paths = simulate_wealth(model_a, pol, 1.0, grid, 2000, seed=3, return_paths=True)
    assert paths.min() >= 0.0
    pol = _policy(model_a, grid, 2.0)
    rep, paths = simulate_wealth(model_a, pol, 1.0, grid, 2000, seed=3, return_paths=True)
    assert paths.max() <= 0.0 and rep.max_y_plus == 0.0


def test_standard_errors_scale(model_a, grid_a):
    pol = _policy(model_a, grid_a, D_STAR_A)
    small = simulate_wealth(model_a, pol, 1.0, grid_a, 4000, seed=1)
    large = simulate_wealth(model_a, pol, 1.0, grid_a, 16000, seed=1)
    assert large.se_mean == pytest.approx(small.se_mean / 2, rel=0.1)
    assert small.variance >= 0


def test_explosion_reports_path(model_a):
    class Wild:
        def portfolio(self, k, X, y, discount):
            return np.where(np.arange(X.size) == 7, 1e300, 0.0)[:, None] * np.maximum(X, 1), 0

    with pytest.raises(NumericalError) as err, np.errstate(over="ignore", invalid="ignore"):
        simulate_wealth(model_a, Wild(), 1.0, TimeGrid(1.0, 5), 100, seed=0)
    assert err.value.reason == "explosion" and "path 7" in str(err.value)


def test_feedback_policy_contract(model_a):
    g = TimeGrid(1.0, 10)
    s1, s2 = solve_riccati_ode(model_a, 1, g), solve_riccati_ode(model_a, 2, g)
    with pytest.raises(ValueError):
        FeedbackPolicy(1.0, s2, s1, model_a)
    with pytest.raises(ValueError):
        FeedbackPolicy(1.0, s1, solve_riccati_ode(model_a, 2, TimeGrid(1.0, 20)), model_a)


def test_factor_policy_runs(factor_model):
    grid = TimeGrid(1.0, 10)
    pol = efficient_policy(factor_model, grid, 1.0, 1.05, paths=3000, seed=1)
    rep = simulate_wealth(factor_model, pol, 1.0, grid, 3000, seed=1)
    assert np.isfinite(rep.mean) and rep.max_y_plus <= 1e-12


def test_terminal_csv(tmp_path):
    path = tmp_path / "t.csv"
    write_terminal_csv(path, np.array([1.0, 1.0 / 3]))
    assert path.read_bytes() == b"path_id,X_T\n0,1\n1,0.333333333333\n"

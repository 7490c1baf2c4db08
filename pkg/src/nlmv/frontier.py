"""Lagrange multiplier, efficient policy and efficient frontier.

For a target mean K >= x0 e^{int r}, with rho = e^{-int_0^T r} and p = P2(0) rho^2 < 1:

    d*  = (x0 P2(0) rho - K) / (p - 1)
    Var = p / (1 - p) * (K - x0 / rho)^2
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import DegenerateDualError, InfeasibleModelError
from .model import MarketModel, TimeGrid, check_feasibility, discount_factor
from .policy import FeedbackPolicy
from .riccati import RiccatiSolution, solve_riccati

DEGENERACY_MARGIN = 1e-12
_K_RTOL = 1e-12

_cache: dict = {}


def riskless_terminal(x0, rho):
    return x0 / rho


def _check_target(x0, K, rho):
    if K < riskless_terminal(x0, rho) * (1 - _K_RTOL) - _K_RTOL:
        raise ValueError(f"target mean {K} is below the riskless return {x0 / rho}")


def _check_dual(P2_0, rho):
    p = P2_0 * rho * rho
    if not p < 1 - DEGENERACY_MARGIN:
        raise DegenerateDualError(f"degenerate dual: P2(0) exp(-2 int r) = {p!r} >= 1")
    return p


def lagrange_multiplier(P2_0, x0, K, rho) -> float:
    p = _check_dual(P2_0, rho)
    _check_target(x0, K, rho)
    d = (x0 * P2_0 * rho - K) / (p - 1)
    if d < x0 / rho * (1 - 1e-12) - 1e-12:
        raise ArithmeticError(f"d* = {d} below the riskless level {x0 / rho}")
    return float(d)


def frontier_variance(P2_0, rho, x0, K) -> float:
    p = _check_dual(P2_0, rho)
    _check_target(x0, K, rho)
    return float(p / (1 - p) * (K - x0 / rho) ** 2)


@dataclass(frozen=True)
class FrontierSpec:
    x0: float
    K: float
    model: MarketModel
    grid: TimeGrid

    def __post_init__(self):
        rho = discount_factor(self.model, 0.0, self.grid.T)
        _check_target(self.x0, self.K, rho)


@dataclass
class FrontierPoint:
    K: float
    d_star: float
    variance: float
    policy: FeedbackPolicy | None = None

    @property
    def std_dev(self):
        return float(np.sqrt(self.variance))


def riccati_pair(model: MarketModel, grid: TimeGrid, paths=100_000, basis_degree=3, seed=0,
                 workers=None):
    """Both Riccati solutions, cached by (model hash, grid, numerics)."""
    key = (model.hash(), grid, None if model.is_deterministic else (paths, basis_degree, seed))
    if key not in _cache:
        sols = tuple(solve_riccati(model, w, grid, paths, basis_degree, seed, workers)
                     for w in (1, 2))
        _cache[key] = sols
    return _cache[key]


def clear_cache():
    _cache.clear()


def _require_feasible(model, grid, mc_paths=20_000, seed=0, workers=None):
    res = check_feasibility(model, grid, mc_paths, seed, workers)
    if not res.feasible:
        raise InfeasibleModelError("feasibility condition fails: both premium integrals vanish")
    return res


def efficient_policy(model: MarketModel, grid: TimeGrid, x0: float, K: float,
                     paths=100_000, basis_degree=3, seed=0, workers=None,
                     solutions=None) -> FeedbackPolicy:
    """Feedback policy at d* for target K; only the pi2 branch is active along optimal paths."""
    rho = discount_factor(model, 0.0, grid.T)
    _check_target(x0, K, rho)
    _require_feasible(model, grid, seed=seed, workers=workers)
    sol1, sol2 = solutions or riccati_pair(model, grid, paths, basis_degree, seed, workers)
    d_star = lagrange_multiplier(sol2.P0, x0, K, rho)
    return FeedbackPolicy(d_star, sol1, sol2, model)


def frontier_curve(model: MarketModel, grid: TimeGrid, x0: float, K_list, paths=100_000,
                   basis_degree=3, seed=0, workers=None, solutions=None):
    rho = discount_factor(model, 0.0, grid.T)
    K_list = [float(k) for k in K_list]
    for K in K_list:
        _check_target(x0, K, rho)
    _require_feasible(model, grid, seed=seed, workers=workers)
    sol1, sol2 = solutions or riccati_pair(model, grid, paths, basis_degree, seed, workers)
    points = []
    for K in K_list:
        d_star = lagrange_multiplier(sol2.P0, x0, K, rho)
        points.append(FrontierPoint(K, d_star, frontier_variance(sol2.P0, rho, x0, K),
                                    FeedbackPolicy(d_star, sol1, sol2, model)))
    return points


def frontier_csv(points) -> str:
    if not points:
        raise ValueError("empty frontier")
    lines = ["K,d_star,variance,std_dev"]
    for p in points:
        lines.append(",".join(f"{v:.12g}" for v in (p.K, p.d_star, p.variance, p.std_dev)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# feasibility construction


@dataclass
class FeasibleStrategy:
    """beta * pi with pi^{i0} = mu_lower^{i0} where positive (long), or
    pi^{i0} = mu_upper^{i0} where negative (short); other coordinates zero."""

    beta: float
    index: int
    side: str  # "long" or "short"
    model: MarketModel
    mids: np.ndarray

    def base(self, k, y=None):
        t = self.mids[min(k, len(self.mids) - 1)]
        _, tl, tu, s = self.model.coefficients(t, y)
        if y is None:
            tl, tu, s = tl[None], tu[None], s[None]
        if self.side == "long":
            mu = np.einsum("nj,nj->n", s[:, self.index, :], tl)
            v = np.where(mu > 0, mu, 0.0)
        else:
            mu = np.einsum("nj,nj->n", s[:, self.index, :], tu)
            v = np.where(mu < 0, mu, 0.0)
        out = np.zeros((v.size, self.model.dim))
        out[:, self.index] = v
        return out

    def portfolio(self, k, X, y, discount):
        pi = self.beta * self.base(k, y)
        if pi.shape[0] != X.shape[0]:
            pi = np.broadcast_to(pi, (X.shape[0], pi.shape[1]))
        return pi, 0


def _premium_rate(strategy, k, y):
    """(pi+)' mu_lower - (pi-)' mu_upper for the unscaled strategy."""
    pi = strategy.base(k, y)
    _, tl, tu, s = strategy.model.coefficients(strategy.mids[k], y)
    if y is None:
        tl, tu, s = tl[None], tu[None], s[None]
    return np.einsum("ni,nij,nj->n", np.maximum(pi, 0), s, tl) \
        - np.einsum("ni,nij,nj->n", np.maximum(-pi, 0), s, tu)


def feasible_strategy(model: MarketModel, grid: TimeGrid, x0: float, K: float,
                      mc_paths: int = 20_000, seed: int = 0, workers=None):
    """Scaled single-asset strategy reaching E X_T = K. Returns (beta, strategy)."""
    rho = discount_factor(model, 0.0, grid.T)
    _check_target(x0, K, rho)
    mids = grid.midpoints
    d = model.dim
    growth_to_T = np.array([np.exp(model.int_r(t, grid.T)) for t in mids])

    # per-coordinate premium integrals E int (mu_lo^i)^+ and E int (mu_hi^i)^-
    if model.is_deterministic:
        per = np.zeros((2, d))
        for t in mids:
            _, tl, tu, s = model.coefficients(t)
            per[0] += np.maximum(s @ tl, 0) * grid.dt
            per[1] += np.maximum(-(s @ tu), 0) * grid.dt
    else:
        def block(b, n):
            dw = rng.brownian_increments(seed, rng.FACTOR_PATHS, b, n, grid.N, d, grid.dt)
            yp = model.simulate_factor(dw, grid.dt)
            acc = np.zeros((2, d))
            for k, t in enumerate(mids):
                _, tl, tu, s = model.coefficients(t, yp[:, k])
                acc[0] += np.maximum(np.einsum("nij,nj->ni", s, tl), 0).sum(0) * grid.dt
                acc[1] += np.maximum(-np.einsum("nij,nj->ni", s, tu), 0).sum(0) * grid.dt
            return acc
        per = sum(rng.map_blocks(block, mc_paths, workers)) / mc_paths
    if per.max() <= 1e-10:
        raise InfeasibleModelError("both feasibility integrals vanish")
    side_idx, index = np.unravel_index(np.argmax(per), per.shape)
    strategy = FeasibleStrategy(0.0, int(index), "long" if side_idx == 0 else "short", model, mids)

    # gain per unit beta: E int e^{int_t^T r} ((pi+)'mu_lo - (pi-)'mu_hi) dt
    if model.is_deterministic:
        gain = sum(growth_to_T[k] * _premium_rate(strategy, k, None)[0] for k in range(grid.N))
        gain *= grid.dt
    else:
        def block(b, n):
            dw = rng.brownian_increments(seed, rng.FACTOR_PATHS, b, n, grid.N, d, grid.dt)
            yp = model.simulate_factor(dw, grid.dt)
            return sum(growth_to_T[k] * _premium_rate(strategy, k, yp[:, k]).sum()
                       for k in range(grid.N)) * grid.dt
        gain = sum(rng.map_blocks(block, mc_paths, workers)) / mc_paths
    if not gain > 0:
        raise InfeasibleModelError("constructed strategy has no positive excess return")
    strategy.beta = float((K - x0 / rho) / gain)
    return strategy.beta, strategy

"""Convex-duality route for d = 1.

The dual value e^{Y~_0} = inf_v E (N_{0,T}^{r,v})^2 over controls v in [theta_lower, theta_upper],
with N^{r,v} = exp(-int (r + v^2/2) dt - int v dW), comes from the quadratic BSDE

    Y~_t = int_t^T g(s, Z~_s) ds - int_t^T Z~_s dW_s,
    g(s, Z) = inf_{theta_lower <= v <= theta_upper} (v^2 - 2 Z v + Z^2/2 - 2 r).

The primal Riccati solution must satisfy P2 e^{Y~} = 1 and Lambda2 / P2 = -Z~.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from . import rng
from .errors import ModelError
from .frontier import efficient_policy, lagrange_multiplier, riccati_pair
from .model import MarketModel, TimeGrid, discount_factor, interval_rates
from .policy import optimal_cost, simulate_wealth
from .riccati import (RiccatiSolution, _lsmc_backward, simulate_factor_ensemble)

DETERMINISTIC_THRESHOLD = 1e-6
LSMC_THRESHOLD = 0.02


def dual_generator(Z, theta_lower, theta_upper, r):
    """g(Z) by the three-branch formula (vectorised)."""
    Z = np.asarray(Z, dtype=float)
    tl = np.asarray(theta_lower, dtype=float)
    tu = np.asarray(theta_upper, dtype=float)
    base = -0.5 * Z * Z - 2 * r
    out = np.where(Z > tu, (tu - Z) ** 2 + base, np.where(Z < tl, (tl - Z) ** 2 + base, base))
    return out if out.ndim else float(out)


def optimal_dual_control(Z, theta_lower, theta_upper):
    """Projection of Z onto [theta_lower, theta_upper]."""
    out = np.clip(Z, theta_lower, theta_upper)
    return out if np.ndim(out) else float(out)


def dual_multiplier(Ytilde_0, x0, d_star, rho) -> float:
    zeta = -2.0 * np.exp(-Ytilde_0) * (x0 - d_star * rho)
    if not zeta > 0:
        raise ValueError(f"dual multiplier {zeta} is not positive; needs x0 < d* exp(-int r)")
    return float(zeta)


def dual_value(zeta, d):
    """u~(zeta) = inf_{x <= d} [((x - d)^-)^2 + zeta x] = d zeta - zeta^2 / 4."""
    return d * zeta - zeta * zeta / 4


@dataclass
class DualSolution:
    grid: TimeGrid
    method: str  # "quadrature" or "lsmc"
    Ytilde: np.ndarray | None = None  # deterministic: per node
    Ztilde: np.ndarray | None = None
    coef_Y: np.ndarray | None = None
    coef_Z: np.ndarray | None = None
    loc: np.ndarray | None = None
    scale: np.ndarray | None = None
    degree: np.ndarray | None = None
    hull: np.ndarray | None = None
    probes: np.ndarray | None = None
    zeta_hat: float | None = None
    d_star: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def Y0(self) -> float:
        if self.method == "quadrature":
            return float(self.Ytilde[0])
        return float(self.coef_Y[0, 0])

    def evaluate_node(self, k, y=None):
        """(Y~ (n,), Z~ (n,)) at node k."""
        if self.method == "quadrature":
            n = 1 if y is None else np.size(y)
            return np.full(n, self.Ytilde[k]), np.full(n, self.Ztilde[k])
        y = np.atleast_1d(np.asarray(y, dtype=float))
        z = (y - self.loc[k]) / self.scale[k]
        deg = int(self.degree[k])
        return (npoly.polyval(z, self.coef_Y[k, : deg + 1]),
                npoly.polyval(z, self.coef_Z[k, 0, : deg + 1]))

    def v_hat(self, k, theta_lower, theta_upper, y=None):
        _, Z = self.evaluate_node(k, y)
        return optimal_dual_control(Z, theta_lower, theta_upper)

    def xi_hat(self, N_terminal):
        """Optimal terminal wealth d* - (zeta/2) N."""
        return self.d_star - 0.5 * self.zeta_hat * np.asarray(N_terminal)


def _require_1d(model):
    if model.dim != 1:
        raise ModelError("the duality route is implemented for d = 1 only")


def solve_dual_bsde(model: MarketModel, grid: TimeGrid, paths: int = 100_000, seed: int = 0,
                    basis_degree: int = 3, workers=None) -> DualSolution:
    _require_1d(model)
    mids = grid.midpoints
    rbar = interval_rates(model, grid)
    if model.is_deterministic:
        g = np.empty(grid.N)
        for k, t in enumerate(mids):
            _, tl, tu, s = model.coefficients(t)
            if not s[0, 0] > 0:
                raise ModelError("duality route needs sigma > 0")
            g[k] = dual_generator(0.0, tl[0], tu[0], rbar[k])
        Y = np.concatenate([np.cumsum((g * grid.dt)[::-1])[::-1], [0.0]])
        return DualSolution(grid, "quadrature", Ytilde=Y, Ztilde=np.zeros(grid.N + 1),
                            meta={"solver": "quadrature"})
    y, dw = simulate_factor_ensemble(model, grid, paths, seed, workers)

    def driver(k, yk, Y_next, Z, Y_guess):
        _, tl, tu, s = model.coefficients(mids[k], yk)
        if np.any(s[:, 0, 0] <= 0):
            raise ModelError("duality route needs sigma > 0")
        return dual_generator(Z[:, 0], tl[:, 0], tu[:, 0], rbar[k])

    out = _lsmc_backward(model, grid, y, dw, basis_degree, driver, 0.0)
    return DualSolution(grid, "lsmc", coef_Y=out["coef_Y"], coef_Z=out["coef_Z"],
                        loc=out["loc"], scale=out["scale"], degree=out["degree"],
                        hull=out["hull"], probes=out["probes"],
                        meta={"solver": "lsmc", "paths": paths, "seed": seed,
                              "basis_degree": basis_degree})


@dataclass
class DualityReport:
    max_p_residual: float
    max_lambda_residual: float
    threshold: float
    rows: list  # (t, P2 e^Y - 1, Lambda2/P2 + Z), worst over probe states

    @property
    def passed(self):
        return self.max_p_residual < self.threshold and self.max_lambda_residual < self.threshold

    def to_dict(self):
        return {"max_p_residual": self.max_p_residual,
                "max_lambda_residual": self.max_lambda_residual,
                "threshold": self.threshold, "passed": self.passed}

    def residual_csv(self) -> str:
        lines = ["t,P2_times_expY_minus_1,lambda_ratio_plus_Z"]
        lines += [f"{t:.12g},{a:.12g},{b:.12g}" for t, a, b in self.rows]
        return "\n".join(lines) + "\n"


def duality_consistency_check(riccati_sol2: RiccatiSolution, dual_sol: DualSolution,
                              grid: TimeGrid) -> DualityReport:
    if riccati_sol2.grid != grid or dual_sol.grid != grid:
        raise ValueError("solutions were built on different grids")
    if riccati_sol2.which != 2:
        raise ValueError("consistency check needs the second Riccati solution")
    lsmc = riccati_sol2.method == "lsmc" or dual_sol.method == "lsmc"
    rows = []
    for k, t in enumerate(grid.nodes):
        states = None
        if riccati_sol2.probes is not None:
            states = riccati_sol2.probes[k]
        elif dual_sol.probes is not None:
            states = dual_sol.probes[k]
        P, L, _ = riccati_sol2.evaluate_node(k, states)
        Yt, Zt = dual_sol.evaluate_node(k, states)
        a = P * np.exp(Yt) - 1
        b = L[:, 0] / P + Zt
        ia, ib = np.argmax(np.abs(a)), np.argmax(np.abs(b))
        rows.append((float(t), float(a[ia]), float(b[ib])))
    arr = np.array([[abs(r[1]), abs(r[2])] for r in rows])
    return DualityReport(float(arr[:, 0].max()), float(arr[:, 1].max()),
                         LSMC_THRESHOLD if lsmc else DETERMINISTIC_THRESHOLD, rows)


@dataclass
class TerminalWealthReport:
    paths: int
    dt: float
    d_star: float
    zeta_hat: float
    Y0: float
    mean_abs_gap: float  # E|X*_T - xi_hat|
    budget: float  # E[xi_hat N]
    budget_residual: float  # |E[xi_hat N] - x0|
    budget_se: float
    shortfall: float  # E[((xi_hat - d*)^-)^2]
    shortfall_se: float
    predicted_cost: float  # P2(0) (x0 - d* rho)^2
    mean_sq_dev: float  # E(X*_T - d*)^2 from the primal simulation
    seed: int

    def to_dict(self):
        return dict(vars(self))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def pricing_kernel(model, grid, dual: DualSolution, increments, factor_paths=None):
    """N_{0,T}^{r, v_hat} along paths given Brownian increments (n, N, 1)."""
    n = increments.shape[0]
    logN = np.zeros(n)
    rbar = interval_rates(model, grid)
    for k, t in enumerate(grid.midpoints):
        yk = None if factor_paths is None else factor_paths[:, k]
        _, tl, tu, _ = model.coefficients(t, yk)
        r = rbar[k]
        tl = tl[..., 0] if yk is not None else tl[0]
        tu = tu[..., 0] if yk is not None else tu[0]
        v = dual.v_hat(k, tl, tu, yk)
        logN -= (r + 0.5 * v * v) * grid.dt + v * increments[:, k, 0]
    return np.exp(logN)


def dual_terminal_wealth_check(model: MarketModel, grid: TimeGrid, x0: float, K: float,
                               paths: int, seed: int, riccati_paths: int = 100_000,
                               basis_degree: int = 3, workers=None) -> TerminalWealthReport:
    """Compare the primal optimal terminal wealth with xi_hat on common Brownian paths."""
    _require_1d(model)
    rho = discount_factor(model, 0.0, grid.T)
    sol1, sol2 = riccati_pair(model, grid, riccati_paths, basis_degree, seed, workers)
    policy = efficient_policy(model, grid, x0, K, solutions=(sol1, sol2), seed=seed,
                              workers=workers)
    dual = solve_dual_bsde(model, grid, riccati_paths, seed, basis_degree, workers)
    d_star = lagrange_multiplier(sol2.P0, x0, K, rho)
    dual.d_star = d_star
    dual.zeta_hat = dual_multiplier(dual.Y0, x0, d_star, rho)
    report, XT = simulate_wealth(model, policy, x0, grid, paths, seed, workers,
                                 return_terminal=True)

    def block(b, n):
        dw = rng.brownian_increments(seed, rng.WEALTH, b, n, grid.N, 1, grid.dt)
        fp = None if model.factor is None else model.simulate_factor(dw, grid.dt)
        return pricing_kernel(model, grid, dual, dw, fp)

    N = np.concatenate(rng.map_blocks(block, paths, workers))
    xi = dual.xi_hat(N)
    budget = xi * N
    short = np.maximum(d_star - xi, 0.0) ** 2
    sq = np.sqrt(paths)
    return TerminalWealthReport(
        paths=paths, dt=grid.dt, d_star=d_star, zeta_hat=dual.zeta_hat, Y0=dual.Y0,
        mean_abs_gap=float(np.mean(np.abs(XT - xi))),
        budget=float(budget.mean()), budget_residual=float(abs(budget.mean() - x0)),
        budget_se=float(budget.std(ddof=1) / sq),
        shortfall=float(short.mean()), shortfall_se=float(short.std(ddof=1) / sq),
        predicted_cost=optimal_cost(sol1.P0, sol2.P0, x0, d_star, rho),
        mean_sq_dev=report.mean_sq_dev, seed=seed)

"""Optimal feedback policy and Monte Carlo simulation of the controlled wealth.

With Y = X - d exp(-int_t^T r), the feedback portfolio is

    pi* = pi1(P1, Lambda1) Y^+ + pi2(P2, Lambda2) Y^-

where pi1, pi2 are the minimisers of the two Hamiltonians.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .errors import NumericalError
from .hamiltonian import HamiltonianInput, eval_hamiltonian, hamiltonian_batch
from .model import MarketModel, TimeGrid, discount_factor, discount_on_grid
from .riccati import RiccatiSolution, evaluate_solution


@dataclass
class FeedbackPolicy:
    d_value: float
    sol1: RiccatiSolution
    sol2: RiccatiSolution
    model: MarketModel
    _gains: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.sol1.which != 1 or self.sol2.which != 2:
            raise ValueError("sol1 must solve the first Riccati equation and sol2 the second")
        if self.sol1.grid != self.sol2.grid:
            raise ValueError("both Riccati solutions must share one grid")

    @property
    def grid(self) -> TimeGrid:
        return self.sol1.grid

    def gains(self, k, y=None):
        """Minimisers (pi1, pi2), each (n, d), at node k and factor states y.

        Also returns the number of states outside the regression range.
        """
        if self.model.is_deterministic:
            if k not in self._gains:
                t = self.grid.midpoints[min(k, self.grid.N - 1)]
                _, tl, tu, s = self.model.coefficients(t)
                out = []
                for sol in (self.sol1, self.sol2):
                    P = float(sol.P[k])
                    out.append(eval_hamiltonian(sol.which, HamiltonianInput(P, 0.0, s, tl, tu)).argmin)
                self._gains[k] = tuple(out)
            n = 1 if y is None else np.size(y)
            g1, g2 = self._gains[k]
            return np.broadcast_to(g1, (n, self.model.dim)), np.broadcast_to(g2, (n, self.model.dim)), 0
        t = self.grid.midpoints[min(k, self.grid.N - 1)]
        _, tl, tu, s = self.model.coefficients(t, y)
        out, extrap = [], 0
        for sol in (self.sol1, self.sol2):
            P, L, ex = sol.evaluate_node(k, y)
            _, arg = hamiltonian_batch(sol.which, P, L, s, tl, tu)
            out.append(arg)
            extrap += int(ex.sum())
        return out[0], out[1], extrap

    def portfolio(self, k, X, y, discount):
        """pi* at node k for wealth X (n,), factor states y, discount exp(-int_{t_k}^T r)."""
        g1, g2, extrap = self.gains(k, y)
        Y = (X - self.d_value * discount)[:, None]
        return g1 * np.maximum(Y, 0) + g2 * np.maximum(-Y, 0), extrap


def optimal_portfolio(policy: FeedbackPolicy, t, X, factor_state=None):
    """pi*(t, X) as a d-vector."""
    T = policy.grid.T
    Y = X - policy.d_value * discount_factor(policy.model, t, T)
    if policy.model.is_deterministic:
        _, tl, tu, s = policy.model.coefficients(min(t, T - 0.5 * policy.grid.dt))
    else:
        _, tl, tu, s = policy.model.coefficients(t, np.array([factor_state]))
        tl, tu, s = tl[0], tu[0], s[0]
    out = []
    for sol in (policy.sol1, policy.sol2):
        P, L = evaluate_solution(sol, t, factor_state)
        out.append(eval_hamiltonian(sol.which, HamiltonianInput(P, L, s, tl, tu)).argmin)
    return out[0] * max(Y, 0.0) + out[1] * max(-Y, 0.0)


def optimal_cost(P1_0, P2_0, x0, d, discount0) -> float:
    """inf E(X_T - d)^2 over admissible portfolios."""
    if not (P1_0 > 0 and P2_0 > 0):
        raise ValueError("Riccati values must be positive")
    gap = x0 - d * discount0
    return float((P1_0 if gap >= 0 else P2_0) * gap * gap)


@dataclass
class SimulationReport:
    paths: int
    mean: float
    variance: float
    se_mean: float
    se_variance: float
    mean_sq_dev: float  # E(X_T - d)^2
    se_mean_sq_dev: float
    max_y_plus: float
    diffusion_scale: float  # max |sigma' pi| over paths and nodes
    dt: float
    seed: int
    extrapolations: int = 0
    target: float = 0.0

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _moments(xs, target):
    n = xs.size
    mean = float(xs.mean())
    dev = xs - mean
    var = float(np.mean(dev ** 2)) * n / max(n - 1, 1)
    m4 = float(np.mean(dev ** 4))
    se_mean = np.sqrt(var / n)
    se_var = np.sqrt(max(m4 - var ** 2, 0.0) / n)
    sq = (xs - target) ** 2
    return mean, var, float(se_mean), float(se_var), float(sq.mean()), float(sq.std() / np.sqrt(n))


def simulate_wealth(model: MarketModel, policy, x0: float, grid: TimeGrid, paths: int,
                    seed: int, workers=None, return_terminal: bool = False,
                    return_paths: bool = False):
    """Euler scheme for the nonlinear wealth equation under a feedback policy.

    The state is Y = X - d exp(-int_t^T r) (d = 0 for policies without a target);
    the riskless growth is integrated exactly per step:

        Y_{k+1} = e^{r_k dt} (Y_k + [(pi+)' S theta_lo - (pi-)' S theta_hi] dt + pi' S dW_k)

    ``policy`` is a FeedbackPolicy or any object with ``portfolio(k, X, y, discount)``
    returning ((n, d) portfolios, extrapolation count). The factor is driven by the
    same increments on its designated component.
    """
    if isinstance(policy, FeedbackPolicy) and policy.grid != grid:
        raise ValueError("policy was built on a different grid")
    d_target = float(getattr(policy, "d_value", 0.0))
    disc = discount_on_grid(model, grid)
    growth = np.exp([model.int_r(a, b) for a, b in zip(grid.nodes[:-1], grid.nodes[1:])])
    mids = grid.midpoints
    dt = grid.dt
    dim = model.dim

    def block(b, n):
        dw = rng.brownian_increments(seed, rng.WEALTH, b, n, grid.N, dim, dt)
        Y = np.full(n, x0 - d_target * disc[0])
        y = None if model.factor is None else np.full(n, model.factor.y0)
        max_plus = max(float(Y.max()), 0.0)
        scale = 0.0
        extrap = 0
        trace = [Y.copy()] if return_paths else None
        for k in range(grid.N):
            X = Y + d_target * disc[k]
            pi, ex = policy.portfolio(k, X, y, disc[k])
            extrap += ex
            _, tl, tu, s = model.coefficients(mids[k], y)
            if y is None:
                tl, tu, s = tl[None], tu[None], s[None]
            sp = np.einsum("ni,nij->nj", pi, s)
            drift = np.einsum("ni,nij,nj->n", np.maximum(pi, 0), s, tl) \
                - np.einsum("ni,nij,nj->n", np.maximum(-pi, 0), s, tu)
            Y = growth[k] * (Y + drift * dt + np.einsum("nj,nj->n", sp, dw[:, k, :]))
            if y is not None:
                y = model.factor.step(y, dw[:, k, model.factor.component], dt)
            bad = ~np.isfinite(Y)
            if bad.any():
                first = b * rng.BLOCK_SIZE + int(np.flatnonzero(bad)[0])
                raise NumericalError(f"wealth exploded on path {first} at step {k}",
                                     reason="explosion")
            scale = max(scale, float(np.abs(sp).max()))
            max_plus = max(max_plus, float(Y.max()))
            if return_paths:
                trace.append(Y.copy())
        XT = Y + d_target * disc[-1]
        return XT, max_plus, scale, extrap, (np.stack(trace, axis=1) if return_paths else None)

    parts = rng.map_blocks(block, paths, workers)
    XT = np.concatenate([p[0] for p in parts])
    mean, var, se_m, se_v, msd, se_msd = _moments(XT, d_target)
    report = SimulationReport(
        paths=paths, mean=mean, variance=var, se_mean=se_m, se_variance=se_v,
        mean_sq_dev=msd, se_mean_sq_dev=se_msd,
        max_y_plus=max(p[1] for p in parts),
        diffusion_scale=max(p[2] for p in parts), dt=dt, seed=seed,
        extrapolations=sum(p[3] for p in parts), target=d_target)
    extras = []
    if return_terminal:
        extras.append(XT)
    if return_paths:
        extras.append(np.concatenate([p[4] for p in parts]))
    return (report, *extras) if extras else report


def write_terminal_csv(path, terminal):
    with open(path, "w", newline="\n") as fh:
        fh.write("path_id,X_T\n")
        for i, x in enumerate(terminal):
            fh.write(f"{i},{x:.12g}\n")

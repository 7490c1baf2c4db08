"""Backward solvers for the two Riccati BSDEs

    dP_i = -[2 r P_i + H_i(P_i, Lambda_i)] dt + Lambda_i' dW,   P_i(T) = 1.

Deterministic coefficients: Lambda = 0 and P solves an ODE, integrated with
classical RK4. Factor-driven coefficients: least-squares Monte Carlo with a
polynomial basis in the factor state.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from . import rng
from .errors import ExtrapolationWarning, ModelError, NumericalError
from .hamiltonian import hamiltonian_batch, hamiltonian_fn
from .model import MarketModel, TimeGrid, interval_rates, probe_states_for

CLAMP_TAU = 0.05
MAX_CLAMP_FRACTION = 0.05
_BOUND_RTOL = 1e-10
_SPREAD_EPS = 1e-10
PROBE_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def upper_bounds(model: MarketModel, grid: TimeGrid) -> np.ndarray:
    """exp(2 int_t^T r) at every node."""
    return np.array([np.exp(2 * model.int_r(t, grid.T)) for t in grid.nodes])


def positivity_floor(model: MarketModel, grid: TimeGrid, probe_states=None) -> float:
    """c1 = exp(int_0^T (2r - c) ds) with c >= sup 2r and c >= sup_I mu_I'(SS')^{-1} mu_I."""
    states = probe_states_for(model, grid, probe_states)
    times = np.concatenate([grid.nodes, grid.midpoints])
    c = 2 * max(model.r(t) for t in times)
    if model.premia_time_homogeneous:
        times = [0.0]
    for t in times:
        _, tl, tu, s = model.coefficients(t, states)
        if states is None:
            tl, tu, s = tl[None], tu[None], s[None]
        mu_lo = np.einsum("nij,nj->ni", s, tl)
        mu_hi = np.einsum("nij,nj->ni", s, tu)
        gram_inv = np.linalg.inv(s @ np.swapaxes(s, -1, -2))
        d = mu_lo.shape[-1]
        for m in range(1 << d):
            sel = ((m >> np.arange(d)) & 1).astype(bool)
            mu = np.where(sel, mu_lo, mu_hi)
            q = np.einsum("ni,nij,nj->n", mu, gram_inv, mu)
            c = max(c, float(q.max()))
    if not np.isfinite(c):
        raise ModelError("unbounded coefficient evaluation in positivity floor")
    return float(np.exp(2 * model.int_r(0.0, grid.T) - c * grid.T))


@dataclass
class RiccatiSolution:
    which: int
    grid: TimeGrid
    method: str  # "ode" or "lsmc"
    lower: float  # positivity floor c1
    upper: np.ndarray  # exp(2 int_t^T r) per node
    P: np.ndarray | None = None  # ode: values per node
    dim: int = 1
    # lsmc representation, one row per node
    coef_P: np.ndarray | None = None  # (N+1, p)
    coef_L: np.ndarray | None = None  # (N+1, d, p)
    loc: np.ndarray | None = None
    scale: np.ndarray | None = None
    degree: np.ndarray | None = None  # basis degree actually used per node
    hull: np.ndarray | None = None  # (N+1, 2)
    probes: np.ndarray | None = None  # (N+1, q) factor-state quantiles
    tau: float = CLAMP_TAU
    meta: dict = field(default_factory=dict)

    @property
    def P0(self) -> float:
        if self.method == "ode":
            return float(self.P[0])
        return float(self.coef_P[0, 0])

    @property
    def Lambda0(self) -> np.ndarray:
        if self.method == "ode":
            return np.zeros(self.dim)
        return self.coef_L[0, :, 0].copy()

    def bounds(self, k):
        if self.method == "ode":
            return self.lower, self.upper[k]
        return self.lower * (1 - self.tau), self.upper[k] * (1 + self.tau)

    def evaluate_node(self, k, y=None):
        """(P (n,), Lambda (n, d), extrapolated (n,)) at node k for factor states y."""
        if self.method == "ode":
            n = 1 if y is None else np.size(y)
            return (np.full(n, self.P[k]), np.zeros((n, self.dim)), np.zeros(n, dtype=bool))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        z = (y - self.loc[k]) / self.scale[k]
        deg = int(self.degree[k])
        P = npoly.polyval(z, self.coef_P[k, : deg + 1])
        L = np.stack([npoly.polyval(z, self.coef_L[k, i, : deg + 1]) for i in range(self.dim)],
                     axis=-1)
        lo, hi = self.bounds(k)
        P = np.clip(P, lo, hi)
        tol = 1e-9 * (1 + np.abs(self.hull[k]))
        extrap = (y < self.hull[k, 0] - tol[0]) | (y > self.hull[k, 1] + tol[1])
        return P, L, extrap

    def to_dict(self):
        out = {"which": self.which, "method": self.method,
               "grid": {"T": self.grid.T, "N": self.grid.N},
               "bounds": {"lower": self.lower, "upper": self.upper.tolist()},
               "dim": self.dim, "tau": self.tau, "meta": self.meta}
        if self.method == "ode":
            out["P"] = self.P.tolist()
        else:
            for key in ("coef_P", "coef_L", "loc", "scale", "degree", "hull", "probes"):
                out[key] = getattr(self, key).tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj) -> "RiccatiSolution":
        grid = TimeGrid(obj["grid"]["T"], obj["grid"]["N"])
        kw = dict(which=obj["which"], grid=grid, method=obj["method"],
                  lower=obj["bounds"]["lower"], upper=np.array(obj["bounds"]["upper"]),
                  dim=obj["dim"], tau=obj["tau"], meta=obj.get("meta", {}))
        if obj["method"] == "ode":
            kw["P"] = np.array(obj["P"])
        else:
            for key in ("coef_P", "coef_L", "loc", "scale", "hull", "probes"):
                kw[key] = np.array(obj[key], dtype=float)
            kw["degree"] = np.array(obj["degree"], dtype=int)
        return cls(**kw)


def _node_index(grid, t):
    if not (-1e-12 <= t <= grid.T + 1e-12):
        raise ValueError(f"t={t} outside [0, {grid.T}]")
    return min(max(t, 0.0), grid.T) / grid.dt


def evaluate_solution(sol: RiccatiSolution, t: float, factor_state=None):
    """(P, Lambda) at time t. Linear interpolation for ODE solutions, nearest node for
    regressions; warns with ExtrapolationWarning outside the trained factor range."""
    x = _node_index(sol.grid, t)
    if sol.method == "ode":
        k = min(int(np.floor(x)), sol.grid.N - 1)
        w = x - k
        P = (1 - w) * sol.P[k] + w * sol.P[k + 1]
        return float(P), np.zeros(sol.dim)
    if factor_state is None:
        raise ValueError("factor state required for a regression solution")
    k = int(np.rint(x))
    P, L, extrap = sol.evaluate_node(k, factor_state)
    if extrap[0]:
        warnings.warn(f"factor state {factor_state} outside trained range "
                      f"{tuple(sol.hull[k])} at node {k}", ExtrapolationWarning, stacklevel=2)
    return float(P[0]), L[0]


def _check_which(which):
    if which not in (1, 2):
        raise ValueError(f"which must be 1 or 2, got {which!r}")


def solve_riccati_ode(model: MarketModel, which: int, grid: TimeGrid) -> RiccatiSolution:
    """RK4 backward from P(T) = 1 for deterministic coefficients (Lambda = 0).

    Coefficients are frozen at the interval midpoint, i.e. treated as piecewise
    constant per grid interval.
    """
    _check_which(which)
    if not model.is_deterministic:
        raise ModelError("solve_riccati_ode needs deterministic coefficients")
    d = model.dim
    P = np.empty(grid.N + 1)
    P[-1] = 1.0
    h = grid.dt
    fixed = None
    rbar = interval_rates(model, grid)
    if model.premia_time_homogeneous:
        _, tl, tu, s = model.coefficients(0.0)
        fixed = hamiltonian_fn(which, s, tl, tu)
    for k in range(grid.N - 1, -1, -1):
        r = rbar[k]
        if fixed is None:
            _, tl, tu, s = model.coefficients(grid.midpoints[k])
            H = hamiltonian_fn(which, s, tl, tu)
        else:
            H = fixed

        def rhs(p):
            if not p > 0:
                raise NumericalError(f"Riccati step produced P={p} <= 0 at node {k}; "
                                     "grid too coarse", reason="nonpositive_riccati")
            return 2 * r * p + H(p)

        p = P[k + 1]
        k1 = rhs(p)
        k2 = rhs(p + 0.5 * h * k1)
        k3 = rhs(p + 0.5 * h * k2)
        k4 = rhs(p + h * k3)
        P[k] = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not P[k] > 0:
            raise NumericalError(f"Riccati step produced P={P[k]} <= 0 at node {k}",
                                 reason="nonpositive_riccati")
    lower = positivity_floor(model, grid)
    upper = upper_bounds(model, grid)
    if np.any(P > upper * (1 + _BOUND_RTOL)) or np.any(P < lower * (1 - _BOUND_RTOL)):
        raise NumericalError("Riccati ODE solution violates the certified bounds",
                             reason="bound_violation")
    return RiccatiSolution(which=which, grid=grid, method="ode", lower=lower, upper=upper,
                           P=P, dim=d, meta={"solver": "rk4"})


# ---------------------------------------------------------------------------
# least-squares Monte Carlo

def simulate_factor_ensemble(model: MarketModel, grid: TimeGrid, paths: int, seed: int,
                             workers=None):
    """Factor paths (n, N+1) and Brownian increments (n, N, d) in block order."""
    def block(b, n):
        dw = rng.brownian_increments(seed, rng.FACTOR_PATHS, b, n, grid.N, model.dim, grid.dt)
        return model.simulate_factor(dw, grid.dt), dw

    parts = rng.map_blocks(block, paths, workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


class _Regressor:
    """Polynomial least squares in the standardised factor state at one node."""

    def __init__(self, y, degree):
        self.loc = float(y.mean())
        spread = float(y.std())
        self.degree = degree if spread > _SPREAD_EPS else 0
        self.scale = spread if self.degree else 1.0
        z = (y - self.loc) / self.scale
        self.X = npoly.polyvander(z, self.degree)
        if np.linalg.matrix_rank(self.X) < self.degree + 1:
            raise NumericalError("rank-deficient regression matrix", reason="rank_deficient")
        self._pinv = np.linalg.pinv(self.X)

    def fit(self, target):
        coef = self._pinv @ target
        return coef, self.X @ coef

    def padded(self, coef, width):
        out = np.zeros(coef.shape[:-1] + (width,)) if coef.ndim > 1 else np.zeros(width)
        out[..., : coef.shape[-1]] = coef
        return out


def _lsmc_backward(model, grid, y, dw, degree, driver, terminal, clamp=None):
    """Shared backward induction for value Y with martingale integrand Z.

    driver(k, y_k, Y_next, Z_k, Y_guess) -> generator values (n,), evaluated with the
    explicit value Y_next and then once more with the first-pass estimate.
    """
    n, N1 = y.shape
    N = N1 - 1
    d = dw.shape[-1]
    p = degree + 1
    dt = grid.dt
    coef_Y = np.zeros((N1, p))
    coef_Z = np.zeros((N1, d, p))
    loc = np.zeros(N1)
    scale = np.ones(N1)
    deg = np.zeros(N1, dtype=int)
    hull = np.zeros((N1, 2))
    probes = np.zeros((N1, len(PROBE_QUANTILES)))
    coef_Y[N, 0] = terminal
    loc[N] = y[:, N].mean()
    hull[N] = y[:, N].min(), y[:, N].max()
    probes[N] = np.quantile(y[:, N], PROBE_QUANTILES)
    Y_next = np.full(n, float(terminal))
    clamped = 0
    for k in range(N - 1, -1, -1):
        reg = _Regressor(y[:, k], degree)
        _, cond = reg.fit(Y_next)
        # martingale increment as control variate: E[(Y_{k+1} - E_k Y_{k+1}) dW_k] / dt
        zc, Z = reg.fit((Y_next - cond)[:, None] * dw[:, k, :] / dt)
        gen = driver(k, y[:, k], Y_next, Z, None)
        _, Y0 = reg.fit(Y_next + dt * gen)
        if clamp is not None:
            Y0 = np.clip(Y0, *clamp(k))
        gen = driver(k, y[:, k], Y_next, Z, Y0)
        yc, Yk = reg.fit(Y_next + dt * gen)
        if clamp is not None:
            lo, hi = clamp(k)
            out = (Yk < lo) | (Yk > hi)
            clamped += int(out.sum())
            Yk = np.clip(Yk, lo, hi)
        coef_Y[k] = reg.padded(yc, p)
        coef_Z[k] = reg.padded(zc.T, p)
        loc[k], scale[k], deg[k] = reg.loc, reg.scale, reg.degree
        hull[k] = y[:, k].min(), y[:, k].max()
        probes[k] = np.quantile(y[:, k], PROBE_QUANTILES)
        Y_next = Yk
    return dict(coef_Y=coef_Y, coef_Z=coef_Z, loc=loc, scale=scale, degree=deg, hull=hull,
                probes=probes, clamped=clamped, samples=n * N)


def solve_riccati_lsmc(model: MarketModel, which: int, grid: TimeGrid, paths: int,
                       basis_degree: int = 3, seed: int = 0, workers=None,
                       tau: float = CLAMP_TAU,
                       max_clamp_fraction: float = MAX_CLAMP_FRACTION) -> RiccatiSolution:
    """Regression-based backward induction for factor-driven coefficients.

    At node k, with P_{k+1} the fitted values on the paths,
        Lambda_k = E_k[(P_{k+1} - E_k P_{k+1}) dW_k] / dt
        P_k      = E_k[P_{k+1} + dt (2 r_k P + H(P, Lambda_k))]
    where P in the driver is first P_{k+1}, then the first-pass P_k (one fixed-point pass).
    """
    _check_which(which)
    if model.factor is None:
        raise ModelError("solve_riccati_lsmc needs a factor process")
    if paths < 10 * (basis_degree + 1) ** 2:
        raise ValueError(f"need at least {10 * (basis_degree + 1) ** 2} paths for degree "
                         f"{basis_degree}")
    y, dw = simulate_factor_ensemble(model, grid, paths, seed, workers)
    lower = positivity_floor(model, grid, np.unique(np.quantile(y, np.linspace(0, 1, 41))))
    upper = upper_bounds(model, grid)
    mids = grid.midpoints
    rbar = interval_rates(model, grid)

    def driver(k, yk, P_next, L, P_guess):
        _, tl, tu, s = model.coefficients(mids[k], yk)
        r = rbar[k]
        Pd = P_next if P_guess is None else P_guess
        H, _ = hamiltonian_batch(which, Pd, L, s, tl, tu)
        return 2 * r * Pd + H

    def clamp(k):
        return lower * (1 - tau), upper[k] * (1 + tau)

    out = _lsmc_backward(model, grid, y, dw, basis_degree, driver, 1.0, clamp)
    frac = out["clamped"] / out["samples"]
    if frac > max_clamp_fraction:
        raise NumericalError(f"clamping fraction {frac:.3%} exceeds {max_clamp_fraction:.0%}; "
                             "increase paths or change the basis", reason="clamping_overflow")
    meta = {"solver": "lsmc", "paths": paths, "basis_degree": basis_degree, "seed": seed,
            "clamped": out["clamped"], "clamp_fraction": frac}
    return RiccatiSolution(which=which, grid=grid, method="lsmc", lower=lower, upper=upper,
                           dim=model.dim, coef_P=out["coef_Y"], coef_L=out["coef_Z"],
                           loc=out["loc"], scale=out["scale"], degree=out["degree"],
                           hull=out["hull"], probes=out["probes"], tau=tau, meta=meta)


def solve_riccati(model, which, grid, paths=100_000, basis_degree=3, seed=0, workers=None):
    """ODE for deterministic models, LSMC otherwise."""
    if model.is_deterministic:
        return solve_riccati_ode(model, which, grid)
    return solve_riccati_lsmc(model, which, grid, paths, basis_degree, seed, workers)

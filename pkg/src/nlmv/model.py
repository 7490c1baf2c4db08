"""Market coefficients, time grid, validation and feasibility for the nonlinear wealth equation

    dX = (r X + (pi+)' sigma theta_lower - (pi-)' sigma theta_upper) dt + pi' sigma dW.

Coefficients are deterministic (constant or piecewise constant in time) or
functions of one scalar mean-reverting factor driven by a single Brownian
component.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ModelError

DETERMINISTIC_TOL = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ValueError(f"horizon must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"steps must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.N + 1) * self.dt
        t[-1] = self.T
        return t

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.dt

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.T, self.N * factor)


@dataclass(frozen=True)
class CoefficientSpec:
    """One scalar coefficient.

    kind="constant":  ``value``
    kind="piecewise": ``values[i]`` on ``[knots[i], knots[i+1])``
    kind="factor":    a function of the factor state, one of
                      ``poly`` (coefficients, lowest degree first),
                      ``table`` ((states, values), linear, flat outside),
                      ``tanh`` ((a, b, c): a + b*tanh(c*y)).
    """

    kind: str = "constant"
    value: float = 0.0
    knots: tuple = ()
    values: tuple = ()
    poly: tuple = ()
    table: tuple = ()
    tanh: tuple = ()

    def __post_init__(self):
        if self.kind == "constant":
            if not np.isfinite(self.value):
                raise ModelError(f"non-finite constant coefficient {self.value}")
        elif self.kind == "piecewise":
            if len(self.knots) != len(self.values) + 1 or not self.values:
                raise ModelError("piecewise coefficient needs len(knots) == len(values) + 1")
            if np.any(np.diff(self.knots) <= 0):
                raise ModelError("piecewise knots must be strictly increasing")
        elif self.kind == "factor":
            forms = [bool(self.poly), bool(self.table), bool(self.tanh)]
            if sum(forms) != 1:
                raise ModelError("factor coefficient needs exactly one of poly/table/tanh")
            if self.table:
                ys, vs = self.table
                if len(ys) != len(vs) or len(ys) < 2 or np.any(np.diff(ys) <= 0):
                    raise ModelError("factor table needs >= 2 increasing states")
            if self.tanh and len(self.tanh) != 3:
                raise ModelError("tanh form is (a, b, c)")
        else:
            raise ModelError(f"unknown coefficient kind {self.kind!r}")

    @classmethod
    def const(cls, value) -> "CoefficientSpec":
        return cls(kind="constant", value=float(value))

    @property
    def is_factor(self) -> bool:
        return self.kind == "factor"

    def __call__(self, t, y=None):
        """Evaluate at time ``t`` (scalar) and factor state(s) ``y``."""
        if self.kind == "constant":
            out = np.full(np.shape(y) if y is not None else (), self.value, dtype=float)
        elif self.kind == "piecewise":
            i = np.searchsorted(self.knots, t, side="right") - 1
            i = int(np.clip(i, 0, len(self.values) - 1))
            out = np.full(np.shape(y) if y is not None else (), self.values[i], dtype=float)
        else:
            if y is None:
                raise ModelError("factor coefficient evaluated without a factor state")
            y = np.asarray(y, dtype=float)
            if self.poly:
                out = np.polynomial.polynomial.polyval(y, self.poly)
            elif self.table:
                out = np.interp(y, self.table[0], self.table[1])
            else:
                a, b, c = self.tanh
                out = a + b * np.tanh(c * y)
            out = np.asarray(out, dtype=float)
        if not np.all(np.isfinite(out)):
            raise ModelError(f"non-finite coefficient evaluation at t={t}")
        return out

    def integral(self, t0, t1) -> float:
        """Exact integral over [t0, t1] for deterministic kinds."""
        if self.kind == "constant":
            return self.value * (t1 - t0)
        if self.kind == "piecewise":
            k = np.asarray(self.knots, dtype=float)
            v = np.asarray(self.values, dtype=float)
            lo = np.clip(k[:-1], t0, t1)
            hi = np.clip(k[1:], t0, t1)
            total = float(np.sum(v * (hi - lo)))
            # constant extension beyond the knots
            if t0 < k[0]:
                total += v[0] * (min(t1, k[0]) - t0)
            if t1 > k[-1]:
                total += v[-1] * (t1 - max(t0, k[-1]))
            return total
        raise ModelError("integral of a factor-driven coefficient is path dependent")

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "piecewise":
            return {"kind": "piecewise", "knots": list(self.knots), "values": list(self.values)}
        if self.poly:
            return {"kind": "factor", "poly": list(self.poly)}
        if self.table:
            return {"kind": "factor", "table": {"states": list(self.table[0]),
                                                "values": list(self.table[1])}}
        return {"kind": "factor", "tanh": list(self.tanh)}

    @classmethod
    def from_dict(cls, obj) -> "CoefficientSpec":
        if isinstance(obj, (int, float)) and not isinstance(obj, bool):
            return cls.const(obj)
        if not isinstance(obj, dict) or "kind" not in obj:
            raise ModelError(f"cannot parse coefficient {obj!r}")
        kind = obj["kind"]
        if kind == "constant":
            return cls.const(obj["value"])
        if kind == "piecewise":
            return cls(kind="piecewise", knots=tuple(map(float, obj["knots"])),
                       values=tuple(map(float, obj["values"])))
        if kind == "factor":
            if "poly" in obj:
                return cls(kind="factor", poly=tuple(map(float, obj["poly"])))
            if "table" in obj:
                tab = obj["table"]
                return cls(kind="factor", table=(tuple(map(float, tab["states"])),
                                                 tuple(map(float, tab["values"]))))
            if "tanh" in obj:
                return cls(kind="factor", tanh=tuple(map(float, obj["tanh"])))
        raise ModelError(f"cannot parse coefficient {obj!r}")


def _as_coef(x):
    return x if isinstance(x, CoefficientSpec) else CoefficientSpec.from_dict(x)


@dataclass(frozen=True)
class FactorProcess:
    """dy = kappa (mean - y) dt + vol dW_component, y(0) = y0 (component is 0-based)."""

    kappa: float = 1.0
    mean: float = 0.0
    vol: float = 0.0
    y0: float = 0.0
    component: int = 0

    def __post_init__(self):
        if self.kappa < 0 or self.vol < 0:
            raise ModelError("factor needs kappa >= 0 and vol >= 0")

    def step(self, y, dw, dt):
        return y + self.kappa * (self.mean - y) * dt + self.vol * dw

    def default_probes(self, T, n=41):
        """Symmetric probe states covering ~4 standard deviations of the factor."""
        if self.kappa > 0:
            sd = self.vol * np.sqrt((1 - np.exp(-2 * self.kappa * T)) / (2 * self.kappa))
        else:
            sd = self.vol * np.sqrt(T)
        centre = self.mean + (self.y0 - self.mean) * np.exp(-self.kappa * T)
        lo = min(self.y0, centre - 4 * sd)
        hi = max(self.y0, centre + 4 * sd)
        if hi - lo < 1e-12:
            return np.array([self.y0])
        return np.linspace(lo, hi, n)


@dataclass(frozen=True)
class MarketModel:
    r: CoefficientSpec
    theta_lower: tuple
    theta_upper: tuple
    sigma: tuple
    factor: FactorProcess | None = None
    epsilon: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "r", _as_coef(self.r))
        object.__setattr__(self, "theta_lower", tuple(_as_coef(c) for c in self.theta_lower))
        object.__setattr__(self, "theta_upper", tuple(_as_coef(c) for c in self.theta_upper))
        object.__setattr__(self, "sigma",
                           tuple(tuple(_as_coef(c) for c in row) for row in self.sigma))
        d = len(self.theta_lower)
        if d < 1 or len(self.theta_upper) != d or len(self.sigma) != d \
                or any(len(row) != d for row in self.sigma):
            raise ModelError("inconsistent dimensions in market model")
        if self.r.is_factor:
            raise ModelError("the interest rate must be deterministic")
        if self.epsilon <= 0:
            raise ModelError("nondegeneracy epsilon must be positive")
        if self.factor is None and self.depends_on_factor:
            raise ModelError("factor-function coefficient without a factor process")
        if self.factor is not None and not 0 <= self.factor.component < d:
            raise ModelError("factor component index out of range")

    @classmethod
    def constant(cls, r, theta_lower, theta_upper, sigma, **kw) -> "MarketModel":
        tl = np.atleast_1d(np.asarray(theta_lower, dtype=float))
        tu = np.atleast_1d(np.asarray(theta_upper, dtype=float))
        s = np.atleast_2d(np.asarray(sigma, dtype=float))
        c = CoefficientSpec.const
        return cls(r=c(r), theta_lower=tuple(c(v) for v in tl),
                   theta_upper=tuple(c(v) for v in tu),
                   sigma=tuple(tuple(c(v) for v in row) for row in s), **kw)

    @property
    def dim(self) -> int:
        return len(self.theta_lower)

    @property
    def depends_on_factor(self) -> bool:
        specs = list(self.theta_lower) + list(self.theta_upper) + [c for row in self.sigma for c in row]
        return any(c.is_factor for c in specs)

    @property
    def is_time_homogeneous(self) -> bool:
        specs = [self.r] + list(self.theta_lower) + list(self.theta_upper) \
            + [c for row in self.sigma for c in row]
        return not any(c.kind == "piecewise" for c in specs)

    @property
    def premia_time_homogeneous(self) -> bool:
        """theta and sigma do not vary with time (r may)."""
        specs = list(self.theta_lower) + list(self.theta_upper) \
            + [c for row in self.sigma for c in row]
        return not any(c.kind == "piecewise" for c in specs)

    @property
    def is_deterministic(self) -> bool:
        return self.factor is None

    def coefficients(self, t, y=None):
        """(r, theta_lower, theta_upper, sigma) at time t.

        With ``y`` an array of n factor states the shapes are (), (n, d), (n, d), (n, d, d);
        with ``y`` None they are (), (d,), (d,), (d, d).
        """
        r = float(self.r(t))
        if y is None:
            if self.depends_on_factor:
                raise ModelError("factor state required for a factor-driven model")
            tl = np.array([float(c(t)) for c in self.theta_lower])
            tu = np.array([float(c(t)) for c in self.theta_upper])
            s = np.array([[float(c(t)) for c in row] for row in self.sigma])
            return r, tl, tu, s
        y = np.atleast_1d(np.asarray(y, dtype=float))
        tl = np.stack([c(t, y) for c in self.theta_lower], axis=-1)
        tu = np.stack([c(t, y) for c in self.theta_upper], axis=-1)
        s = np.stack([np.stack([c(t, y) for c in row], axis=-1) for row in self.sigma], axis=-2)
        return r, tl, tu, s

    def int_r(self, t0, t1) -> float:
        return self.r.integral(t0, t1)

    def to_dict(self):
        out = {
            "dimension": self.dim,
            "r": self.r.to_dict(),
            "theta_lower": [c.to_dict() for c in self.theta_lower],
            "theta_upper": [c.to_dict() for c in self.theta_upper],
            "sigma": [[c.to_dict() for c in row] for row in self.sigma],
            "epsilon": self.epsilon,
        }
        if self.factor is not None:
            f = self.factor
            out["factor"] = {"kappa": f.kappa, "mean": f.mean, "vol": f.vol,
                             "y0": f.y0, "component": f.component}
        return out

    @classmethod
    def from_dict(cls, obj) -> "MarketModel":
        try:
            factor = obj.get("factor")
            if factor is not None:
                factor = FactorProcess(**{k: factor[k] for k in factor})
            model = cls(r=obj["r"], theta_lower=obj["theta_lower"],
                        theta_upper=obj["theta_upper"], sigma=obj["sigma"],
                        factor=factor, epsilon=float(obj.get("epsilon", 1e-8)))
        except (KeyError, TypeError) as exc:
            raise ModelError(f"cannot parse market model: {exc}") from exc
        if "dimension" in obj and int(obj["dimension"]) != model.dim:
            raise ModelError("declared dimension does not match coefficient shapes")
        return model

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def simulate_factor(self, increments, dt):
        """Euler paths of the factor from Brownian increments of shape (n, N, d) -> (n, N+1)."""
        n, steps, _ = increments.shape
        f = self.factor
        y = np.empty((n, steps + 1))
        y[:, 0] = f.y0
        for k in range(steps):
            y[:, k + 1] = f.step(y[:, k], increments[:, k, f.component], dt)
        return y


# ---------------------------------------------------------------------------
# validation

@dataclass
class Violation:
    kind: str
    t: float
    state: float | None
    index: int | tuple | None
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def to_dict(self):
        return {"valid": self.valid,
                "violations": [vars(v) for v in self.violations]}


def probe_states_for(model, grid, probe_states=None):
    if model.factor is None:
        return None
    if probe_states is None:
        return model.factor.default_probes(grid.T)
    return np.atleast_1d(np.asarray(probe_states, dtype=float))


def validate_model(model: MarketModel, grid: TimeGrid, probe_states=None) -> ValidationReport:
    """Check theta ordering and uniform nondegeneracy at every node (and probe state)."""
    report = ValidationReport()
    states = probe_states_for(model, grid, probe_states)
    for t in grid.nodes:
        _, tl, tu, s = model.coefficients(t, states)
        if states is None:
            tl, tu, s = tl[None], tu[None], s[None]
        eig = np.linalg.eigvalsh(s @ np.swapaxes(s, -1, -2))[:, 0]
        for j in range(tl.shape[0]):
            state = None if states is None else float(states[j])
            for i in np.flatnonzero(tl[j] > tu[j]):
                report.violations.append(Violation(
                    "theta ordering", float(t), state, int(i),
                    f"theta_lower={tl[j, i]:.6g} > theta_upper={tu[j, i]:.6g}"))
            if eig[j] < model.epsilon:
                report.violations.append(Violation(
                    "nondegeneracy", float(t), state, None,
                    f"min eigenvalue {eig[j]:.3g} < epsilon {model.epsilon:.3g}"))
    return report


# ---------------------------------------------------------------------------
# feasibility

@dataclass
class FeasibilityResult:
    feasible: bool
    lhs_values: tuple
    tol: float
    stderr: tuple = (0.0, 0.0)
    method: str = "quadrature"

    def to_dict(self):
        return {"feasible": self.feasible, "lhs_values": list(self.lhs_values),
                "tol": self.tol, "stderr": list(self.stderr), "method": self.method}


def _premium_parts(tl, tu, s):
    mu_lo = np.einsum("...ij,...j->...i", s, tl)
    mu_hi = np.einsum("...ij,...j->...i", s, tu)
    return np.maximum(mu_lo, 0).sum(-1), np.maximum(-mu_hi, 0).sum(-1)


def check_feasibility(model: MarketModel, grid: TimeGrid, mc_paths: int = 0, seed: int = 0,
                      workers=None) -> FeasibilityResult:
    """Evaluate sum_i E int (mu_lower^i)^+ dt and sum_i E int (mu_upper^i)^- dt."""
    dt = grid.dt
    if model.is_deterministic:
        lhs1 = lhs2 = 0.0
        for t in grid.midpoints:
            _, tl, tu, s = model.coefficients(t)
            a, b = _premium_parts(tl, tu, s)
            lhs1 += float(a) * dt
            lhs2 += float(b) * dt
        tol = DETERMINISTIC_TOL
        return FeasibilityResult(lhs1 > tol or lhs2 > tol, (lhs1, lhs2), tol)

    if mc_paths <= 0:
        raise ValueError("mc_paths must be positive for a factor-driven model")

    def block(b, n):
        dw = rng.brownian_increments(seed, rng.FACTOR_PATHS, b, n, grid.N, model.dim, dt)
        y = model.simulate_factor(dw, dt)
        acc = np.zeros((n, 2))
        for k, t in enumerate(grid.midpoints):
            _, tl, tu, s = model.coefficients(t, y[:, k])
            a, c = _premium_parts(tl, tu, s)
            acc[:, 0] += a * dt
            acc[:, 1] += c * dt
        return acc

    samples = np.concatenate(rng.map_blocks(block, mc_paths, workers))
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(len(samples)) if len(samples) > 1 else np.zeros(2)
    thresh = np.maximum(3 * se, DETERMINISTIC_TOL)
    feasible = bool(np.any(mean > thresh))
    return FeasibilityResult(feasible, (float(mean[0]), float(mean[1])), float(thresh.max()),
                             (float(se[0]), float(se[1])), method="monte_carlo")


def discount_factor(model: MarketModel, t: float, T: float) -> float:
    """exp(-int_t^T r ds)."""
    if not (-1e-12 <= t <= T + 1e-12):
        raise ValueError(f"t={t} outside [0, {T}]")
    t = min(max(t, 0.0), T)
    if t == T:
        return 1.0
    return float(np.exp(-model.int_r(t, T)))


def interval_rates(model: MarketModel, grid: TimeGrid) -> np.ndarray:
    """Average of r over each grid interval (exact for piecewise-constant r)."""
    return np.array([model.int_r(a, b) for a, b in zip(grid.nodes[:-1], grid.nodes[1:])]) / grid.dt


def discount_on_grid(model: MarketModel, grid: TimeGrid) -> np.ndarray:
    return np.array([discount_factor(model, t, grid.T) for t in grid.nodes])

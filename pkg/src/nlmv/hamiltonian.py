"""Exact minimisation of the kinked quadratics behind the two Riccati drivers.

For P > 0 the Hamiltonians are

    H1(P, L) = inf_pi  P pi'SS'pi + 2 [P((pi+)'mu_lo - (pi-)'mu_hi) + pi'S L]
    H2(P, L) = inf_pi  P pi'SS'pi - 2 [P((pi+)'mu_lo - (pi-)'mu_hi) + pi'S L]

with mu_lo = S theta_lower, mu_hi = S theta_upper. On the closed orthant where
pi_i >= 0 exactly for i in I the kink terms are linear, leaving a strictly
convex quadratic with sign constraints. Each such problem is solved exactly by
enumerating which coordinates sit at zero (the KKT active set).

H2 reuses the H1 kernel: its objective equals the H1 objective evaluated with
(theta_lower, theta_upper, L) -> (-theta_lower, -theta_upper, -L).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

D_MAX = 10
TIE_RTOL = 1e-12
_KKT_TOL = 1e-11


@dataclass(frozen=True)
class HamiltonianInput:
    P: float
    Lambda: np.ndarray
    sigma: np.ndarray
    theta_lower: np.ndarray
    theta_upper: np.ndarray

    def __post_init__(self):
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        d = sigma.shape[0]
        lam = np.broadcast_to(np.asarray(self.Lambda, dtype=float), (d,)).copy()
        tl = np.broadcast_to(np.asarray(self.theta_lower, dtype=float), (d,)).copy()
        tu = np.broadcast_to(np.asarray(self.theta_upper, dtype=float), (d,)).copy()
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "Lambda", lam)
        object.__setattr__(self, "theta_lower", tl)
        object.__setattr__(self, "theta_upper", tu)
        object.__setattr__(self, "P", float(self.P))
        if sigma.shape != (d, d):
            raise ValueError("sigma must be square")
        if not self.P > 0:
            raise ValueError(f"P must be positive, got {self.P}")
        if np.any(tl > tu):
            raise ValueError("theta_lower must not exceed theta_upper")
        if np.linalg.eigvalsh(sigma @ sigma.T)[0] <= 0:
            raise ValueError("sigma sigma' must be positive definite")

    @property
    def dim(self):
        return self.sigma.shape[0]

    @property
    def mu_lower(self):
        return self.sigma @ self.theta_lower

    @property
    def mu_upper(self):
        return self.sigma @ self.theta_upper


@dataclass
class HamiltonianResult:
    value: float
    argmin: np.ndarray
    orthant: tuple
    ties: list = field(default_factory=list)


def objective(which, P, pi, Lambda, sigma, theta_lower, theta_upper):
    """Raw (unreduced) objective whose infimum defines H1 / H2."""
    pi = np.asarray(pi, dtype=float)
    sigma = np.atleast_2d(sigma)
    sp = pi @ sigma
    kink = P * (np.maximum(pi, 0) @ (sigma @ theta_lower)
                - np.maximum(-pi, 0) @ (sigma @ theta_upper)) + sp @ np.asarray(Lambda)
    sign = 1.0 if which in (1, "H1") else -1.0
    return P * (sp @ sp) + 2 * sign * kink


@lru_cache(maxsize=None)
def orthant_order(d):
    """Orthant bitmasks sorted so their index tuples are in lexicographic order."""
    subsets = [tuple(i for i in range(d) if m >> i & 1) for m in range(1 << d)]
    order = sorted(range(1 << d), key=lambda m: subsets[m])
    return np.array(order), [subsets[m] for m in order]


@lru_cache(maxsize=None)
def _active_sets(d):
    masks = []
    for m in range(1 << d):
        free = np.array([i for i in range(d) if not m >> i & 1], dtype=int)
        clamped = np.array([i for i in range(d) if m >> i & 1], dtype=int)
        masks.append((free, clamped))
    return masks


@lru_cache(maxsize=256)
def _active_set_maps(gram_bytes, d):
    """For one Gram matrix: free masks (A, d) and maps M (A, d, d) with pi = M c."""
    gram = np.frombuffer(gram_bytes).reshape(d, d)
    sets = _active_sets(d)
    free_mask = np.zeros((len(sets), d), dtype=bool)
    maps = np.zeros((len(sets), d, d))
    for a, (free, _) in enumerate(sets):
        if free.size:
            free_mask[a, free] = True
            maps[a][np.ix_(free, free)] = -np.linalg.inv(gram[np.ix_(free, free)])
    return free_mask, maps


def _kkt_solve_single(gram, c, nonneg):
    """``_kkt_solve`` for one (unbatched) Gram matrix, all active sets at once."""
    d = c.shape[-1]
    free_mask, maps = _active_set_maps(np.ascontiguousarray(gram, dtype=float).tobytes(), d)
    pi = np.einsum("aij,...bj->...abi", maps, c)
    grad = np.einsum("ij,...abj->...abi", gram, pi) + c[..., None, :, :]
    tol_p = _KKT_TOL * (1.0 + np.abs(pi))
    scale = 1.0 + np.abs(c).max(axis=-1, keepdims=True)[..., None, :, :]
    tol_g = _KKT_TOL * scale
    cond_free = np.where(nonneg, pi >= -tol_p, pi <= tol_p)
    cond_clamp = np.where(nonneg, grad >= -tol_g, grad <= tol_g)
    ok = np.where(free_mask[:, None, :], cond_free, cond_clamp).all(axis=-1)
    val = np.einsum("...abi,...abi->...ab", pi, grad + c[..., None, :, :])
    val = np.where(ok, val, np.inf)
    a = np.argmin(val, axis=-2)
    best_val = np.take_along_axis(val, a[..., None, :], axis=-2)[..., 0, :]
    best_pi = np.take_along_axis(pi, a[..., None, :, None], axis=-3)[..., 0, :, :]
    if not np.all(np.isfinite(best_val)):
        raise ArithmeticError("no KKT point accepted; sigma sigma' may be singular")
    return best_val, best_pi


def _kkt_solve(gram, c, nonneg):
    """Minimise pi'G pi + 2 pi'c over {pi_i >= 0 if nonneg_i else pi_i <= 0}.

    gram: (..., d, d) positive definite; c: (..., B, d); nonneg: (B, d) bool.
    Returns reduced values (..., B) and minimisers (..., B, d).
    """
    if gram.ndim == 2:
        return _kkt_solve_single(gram, c, nonneg)
    d = c.shape[-1]
    best_val = np.full(c.shape[:-1], np.inf)
    best_pi = np.zeros(c.shape)
    scale = 1.0 + np.abs(c).max(axis=-1, keepdims=True)
    for free, clamped in _active_sets(d):
        pi = np.zeros(c.shape)
        if free.size:
            g_ff = gram[..., free[:, None], free[None, :]]
            rhs = -c[..., free]
            sol = np.linalg.solve(g_ff[..., None, :, :], rhs[..., None])[..., 0]
            pi[..., free] = sol
        grad = np.einsum("...ij,...bj->...bi", gram, pi) + c
        ok = np.ones(c.shape[:-1], dtype=bool)
        if free.size:
            pf = pi[..., free]
            tol = _KKT_TOL * (1.0 + np.abs(pf))
            sign_ok = np.where(nonneg[:, free], pf >= -tol, pf <= tol)
            ok &= sign_ok.all(axis=-1)
        if clamped.size:
            gc = grad[..., clamped]
            tol = _KKT_TOL * scale
            mult_ok = np.where(nonneg[:, clamped], gc >= -tol, gc <= tol)
            ok &= mult_ok.all(axis=-1)
        val = np.einsum("...bi,...bi->...b", pi, np.einsum("...ij,...bj->...bi", gram, pi)) \
            + 2 * np.einsum("...bi,...bi->...b", pi, c)
        take = ok & (val < best_val)
        best_val = np.where(take, val, best_val)
        best_pi = np.where(take[..., None], pi, best_pi)
    if not np.all(np.isfinite(best_val)):
        raise ArithmeticError("no KKT point accepted; sigma sigma' may be singular")
    return best_val, best_pi


def orthant_qp_min(P, Lambda, sigma, mu_I, I):
    """Minimise P pi'SS'pi + 2[P pi'mu_I + pi'S Lambda] over the closed orthant
    {pi_i >= 0 for i in I, pi_i <= 0 otherwise}. Returns (value, pi)."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = sigma.shape[0]
    if not P > 0:
        raise ValueError("P must be positive")
    mu_I = np.broadcast_to(np.asarray(mu_I, dtype=float), (d,))
    lam = np.broadcast_to(np.asarray(Lambda, dtype=float), (d,))
    nonneg = np.zeros((1, d), dtype=bool)
    nonneg[0, list(I)] = True
    c = (mu_I + sigma @ lam / P)[None, :]
    val, pi = _kkt_solve(sigma @ sigma.T, c, nonneg)
    return float(P * val[0]), pi[0]


def _kernel(P, Lambda, sigma, mu_pos, mu_neg):
    """Per-orthant minima of P pi'SS'pi + 2[P(pi+'mu_pos - pi-'mu_neg) + pi'S L].

    Leading batch dims broadcast. Returns values (..., B) and argmins (..., B, d),
    orthants ordered lexicographically (see ``orthant_order``).
    """
    d = sigma.shape[-1]
    order, _ = orthant_order(d)
    nonneg = ((order[:, None] >> np.arange(d)) & 1).astype(bool)  # (B, d)
    mu_I = np.where(nonneg, mu_pos[..., None, :], mu_neg[..., None, :])
    s_lam = np.einsum("...ij,...j->...i", sigma, Lambda) / P[..., None]
    c = mu_I + s_lam[..., None, :]
    gram = sigma @ np.swapaxes(sigma, -1, -2)
    val, pi = _kkt_solve(gram, c, nonneg)
    return P[..., None] * val, pi


def _signed_inputs(which, Lambda, mu_lo, mu_hi):
    if which in (1, "H1"):
        return Lambda, mu_lo, mu_hi
    if which in (2, "H2"):
        return -Lambda, -mu_lo, -mu_hi
    raise ValueError(f"which must be 1/'H1' or 2/'H2', got {which!r}")


def _select(vals):
    """Index of the best orthant with ties resolved to the first in order."""
    vmin = vals.min(axis=-1, keepdims=True)
    tied = vals <= vmin + TIE_RTOL * np.maximum(1.0, np.abs(vmin))
    return np.argmax(tied, axis=-1), tied


def eval_hamiltonian(which, inp: HamiltonianInput, d_max: int = D_MAX) -> HamiltonianResult:
    d = inp.dim
    if d > d_max:
        raise ValueError(f"dimension {d} exceeds the orthant-enumeration cap {d_max}")
    lam, mpos, mneg = _signed_inputs(which, inp.Lambda, inp.mu_lower, inp.mu_upper)
    vals, pis = _kernel(np.array(inp.P), lam, inp.sigma, mpos, mneg)
    idx, tied = _select(vals)
    _, subsets = orthant_order(d)
    ties = [subsets[j] for j in np.flatnonzero(tied)]
    return HamiltonianResult(value=float(vals[idx]), argmin=pis[idx].copy(),
                             orthant=subsets[int(idx)], ties=ties if len(ties) > 1 else [])


def hamiltonian_batch(which, P, Lambda, sigma, theta_lower, theta_upper):
    """Vectorised H over n points: P (n,), Lambda (n, d), sigma (n, d, d), thetas (n, d).

    Returns (values (n,), argmins (n, d)) with the same tie rule as ``eval_hamiltonian``.
    """
    P = np.asarray(P, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    d = sigma.shape[-1]
    shape = P.shape
    sigma = np.broadcast_to(sigma, shape + (d, d))
    Lambda = np.broadcast_to(np.asarray(Lambda, dtype=float), shape + (d,))
    tl = np.broadcast_to(np.asarray(theta_lower, dtype=float), shape + (d,))
    tu = np.broadcast_to(np.asarray(theta_upper, dtype=float), shape + (d,))
    if np.any(P <= 0):
        raise ValueError("P must be positive")
    mu_lo = np.einsum("...ij,...j->...i", sigma, tl)
    mu_hi = np.einsum("...ij,...j->...i", sigma, tu)
    lam, mpos, mneg = _signed_inputs(which, Lambda, mu_lo, mu_hi)
    vals, pis = _kernel(P, lam, sigma, mpos, mneg)
    idx, _ = _select(vals)
    value = np.take_along_axis(vals, idx[..., None], axis=-1)[..., 0]
    argmin = np.take_along_axis(pis, idx[..., None, None], axis=-2)[..., 0, :]
    return value, argmin


def hamiltonian_fn(which, sigma, theta_lower, theta_upper):
    """Validate coefficients once and return ``(P, Lambda) -> H value`` for repeated calls."""
    inp = HamiltonianInput(1.0, 0.0, sigma, theta_lower, theta_upper)
    lam_sign = 1.0 if which in (1, "H1") else -1.0
    _, mpos, mneg = _signed_inputs(which, inp.Lambda, inp.mu_lower, inp.mu_upper)
    sig = inp.sigma

    def H(P, Lambda=None):
        if not P > 0:
            raise ValueError(f"P must be positive, got {P}")
        lam = np.zeros(sig.shape[0]) if Lambda is None else lam_sign * np.asarray(Lambda, float)
        vals, _ = _kernel(np.array(float(P)), lam, sig, mpos, mneg)
        return float(vals.min())

    return H


def closed_form_1d(P, Lambda, theta_lower, theta_upper, sigma):
    """H2 and its minimiser for d = 1, sigma > 0, by the three-branch formula."""
    if not sigma > 0:
        raise ValueError("closed form needs sigma > 0")
    ratio = Lambda / P
    if ratio >= -theta_lower:
        a = P * theta_lower + Lambda
    elif ratio <= -theta_upper:
        a = P * theta_upper + Lambda
    else:
        return 0.0, 0.0
    return -a * a / P, a / (P * sigma)


def lower_bound_f(inp: HamiltonianInput) -> float:
    """Orthant-relaxed lower bound on H1: drop the sign constraints orthant by orthant."""
    d = inp.dim
    gram_inv = np.linalg.inv(inp.sigma @ inp.sigma.T)
    sig_t_inv = np.linalg.inv(inp.sigma.T)
    best = np.inf
    for I in itertools.product((True, False), repeat=d):
        mu = np.where(I, inp.mu_lower, inp.mu_upper)
        v = -(mu @ gram_inv @ mu) * inp.P - 2 * mu @ sig_t_inv @ inp.Lambda
        best = min(best, v)
    return float(best - inp.Lambda @ inp.Lambda / inp.P)

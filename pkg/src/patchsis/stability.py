"""Closed-form stability tests on the rates, without computing mu directly.

Everything is evaluated at the stationary profile.  With M = I - F* the
matrix BM + L* is an irreducible Laplacian; w is its positive left null
vector (scaled so max w = 1), W = diag(w), and lambda2 is the second-smallest
eigenvalue of the symmetrized (W(BM + L*) + (BM + L*)^T W)/2.  Writing
s = min (delta - beta), the sufficient spectral test reads

    lambda2 / ((1 + sqrt(1 + lambda2 / sum w (delta - beta - s)))^2 nm + 1) + s >= 0

and can compensate a worst deficit as low as s_lower = -lambda2/(4mn + 1).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (AssumptionViolated, DegenerateDenominator, Infeasible,
                     SolverFailure)
from .model import EpidemicRates, assemble_F, assemble_L
from .network import validate_strong_connectivity

NULL_RESIDUAL_TOL = 1e-10


@dataclass
class StabilityChecklist:
    """Outcome of the four rate conditions plus the spectral ingredients."""

    necessary_local: np.ndarray   # per node: exists a layer with delta > beta - nu
    necessary_global: bool        # exists a coordinate with delta >= beta
    sufficient_uniform: bool      # delta >= beta everywhere
    sufficient_spectral: bool     # weighted-Laplacian compensation test
    degenerate: bool              # all deficits equal; spectral test reduces to s >= 0
    w: np.ndarray = None
    lambda2: float = 0.0
    s: float = 0.0
    s_lower: float = 0.0
    spectral_lhs: float = None

    def to_json_dict(self):
        return {
            "necessary_local": self.necessary_local.tolist(),
            "necessary_local_all": bool(self.necessary_local.all()),
            "necessary_global": self.necessary_global,
            "sufficient_uniform": self.sufficient_uniform,
            "sufficient_spectral": self.sufficient_spectral,
            "degenerate": self.degenerate,
            "w": self.w.tolist(),
            "lambda2": self.lambda2,
            "s": self.s,
            "s_lower": self.s_lower,
            "spectral_lhs": self.spectral_lhs,
        }


def _weighted_laplacian(d, beta):
    """(BM + L*, w, lambda2) at the stationary profile."""
    x_star = d.stationary_profile()
    f_dense = assemble_F(d, x_star).dense()
    l_dense = assemble_L(d, x_star).dense()
    k = d.n * d.m
    bm_l = beta[:, None] * (np.eye(k) - f_dense) + l_dense
    a = np.vstack([bm_l.T, np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    w, *_ = np.linalg.lstsq(a, b, rcond=None)
    residual = np.max(np.abs(bm_l.T @ w))
    if residual > NULL_RESIDUAL_TOL * max(1.0, np.abs(bm_l).max()):
        raise SolverFailure(f"left null vector residual {residual:.3e}")
    if np.any(w <= 0):
        raise SolverFailure("left null vector is not strictly positive")
    w = w / w.max()
    sym = 0.5 * (w[:, None] * bm_l + bm_l.T * w[None, :])
    lam = np.linalg.eigvalsh(sym)
    return bm_l, w, float(lam[1])


def spectral_condition_lhs(lambda2, w, beta, delta, nm):
    """Left-hand side of the spectral test minus s; DegenerateDenominator when
    every deficit equals the minimum."""
    s = float(np.min(delta - beta))
    denom = float(np.sum(w * (delta - beta - s)))
    if denom == 0.0:
        raise DegenerateDenominator("all deficits equal; the test reduces to s >= 0")
    frac = lambda2 / ((1.0 + np.sqrt(1.0 + lambda2 / denom)) ** 2 * nm + 1.0)
    return frac, s


def check_conditions(d, r):
    """Evaluate the rate conditions for global extinction at the stationary
    profile.  Layers must be strongly connected."""
    if not all(validate_strong_connectivity(d)):
        raise AssumptionViolated("stability conditions assume strongly connected layers")
    bg, dg = r.grids()
    nus = np.stack([g.exit_rates for g in d.layers])
    necessary_local = np.any(dg > bg - nus, axis=0)
    necessary_global = bool(np.any(dg >= bg))
    sufficient_uniform = bool(np.all(dg >= bg))

    _bm_l, w, lambda2 = _weighted_laplacian(d, r.beta)
    nm = d.n * d.m
    s_lower = -lambda2 / (4.0 * nm + 1.0)
    try:
        frac, s = spectral_condition_lhs(lambda2, w, r.beta, r.delta, nm)
        lhs = frac + s
        sufficient_spectral = bool(lhs >= 0.0)
        degenerate = False
    except DegenerateDenominator:
        s = float(np.min(r.delta - r.beta))
        lhs = None
        sufficient_spectral = bool(s >= 0.0)
        degenerate = True
    return StabilityChecklist(
        necessary_local=necessary_local,
        necessary_global=necessary_global,
        sufficient_uniform=sufficient_uniform,
        sufficient_spectral=sufficient_spectral,
        degenerate=degenerate,
        w=w, lambda2=lambda2, s=float(s), s_lower=float(s_lower),
        spectral_lhs=None if lhs is None else float(lhs))


def delta_for_spectral_condition(d, r_partial, deficit_index, margin=1e-6):
    """Complete the recovery rates so the spectral test holds with `margin`.

    The coordinates in `deficit_index` (flat layer-major) keep the recovery
    rates given in r_partial; every other coordinate receives one common
    value found by bisection over [max beta, max beta + 1].  The worst
    deficit s is read off the fixed coordinates.  Infeasible when s cannot be
    compensated (s <= s_lower) or the bracket is too small.
    """
    if not all(validate_strong_connectivity(d)):
        raise AssumptionViolated("stability conditions assume strongly connected layers")
    nm = d.n * d.m
    deficit_index = np.asarray(deficit_index, dtype=int)
    free = np.setdiff1d(np.arange(nm), deficit_index)
    if free.size == 0:
        raise ValueError("no free coordinates to solve for")
    beta = r_partial.beta
    fixed_delta = r_partial.delta[deficit_index]
    s = float(np.min(fixed_delta - beta[deficit_index]))

    _bm_l, w, lambda2 = _weighted_laplacian(d, beta)
    s_lower = -lambda2 / (4.0 * nm + 1.0)

    lo = float(beta[free].max())
    if s >= 0.0:
        # zero (or positive) worst deficit: the test already holds with the
        # common value at the infection rate itself
        return _completed(r_partial, d, free, lo), lo
    if s - margin <= s_lower:
        raise Infeasible(
            f"worst deficit s = {s:.6g} is at or below the compensable floor "
            f"{s_lower:.6g}")

    def gap(common):
        delta = r_partial.delta.copy()
        delta[free] = common
        deficits = delta - beta - s
        denom = float(np.sum(w * deficits))
        if denom <= 0.0:
            return s - margin
        frac = lambda2 / ((1.0 + np.sqrt(1.0 + lambda2 / denom)) ** 2 * nm + 1.0)
        return frac + s - margin

    hi = lo + 1.0
    if gap(hi) < 0.0:
        raise Infeasible("no common recovery rate in [max beta, max beta + 1] "
                         "satisfies the spectral test")
    if gap(lo) >= 0.0:
        return _completed(r_partial, d, free, lo), lo
    a, b = lo, hi
    for _ in range(200):
        mid = 0.5 * (a + b)
        if gap(mid) >= 0.0:
            b = mid
        else:
            a = mid
        if b - a <= 1e-14:
            break
    return _completed(r_partial, d, free, b), b


def _completed(r_partial, d, free, common):
    delta = r_partial.delta.copy()
    delta[free] = common
    return EpidemicRates(r_partial.beta.copy(), delta, d.n, d.m)

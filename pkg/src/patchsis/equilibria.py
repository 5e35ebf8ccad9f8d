"""Equilibrium analysis: spectral abscissa, disease-free/endemic regime
classification, and the monotone fixed-point construction of the endemic
equilibrium.

The linchpin matrix is the Jacobian of the infection dynamics at the
extinction state with the populations at their stationary profile,
G = B F* - D - L*.  Its spectral abscissa mu decides the regime; the
reproduction ratio R0 = rho(A F*) with A = (L* + D)^{-1} B crosses 1 exactly
where mu crosses 0.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (AssumptionViolated, EigenFailure, NonConvergence,
                     NotEndemic, SolverFailure)
from .model import (assemble_F, assemble_F_bar, assemble_L, assemble_L_bar,
                    build_reduced_system, full_rhs, SystemState)
from .network import absorbed_profile, validate_strong_connectivity

BOUNDARY_BAND = 1e-8
FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 100_000
FIXED_POINT_AGREEMENT = 1e-8
RHS_RESIDUAL_TOL = 1e-8


def spectral_abscissa(mat):
    """Largest real part over the full spectrum (dense solve)."""
    try:
        return float(np.max(np.linalg.eigvals(mat).real))
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(f"eigenvalue solve failed: {exc}") from exc


def perron_pair(mat, max_iter=200, tol=1e-12):
    """(mu, u) for an irreducible matrix with nonnegative off-diagonals:
    the spectral abscissa and its positive right eigenvector, by inverse
    iteration at a shifted dominant eigenvalue."""
    mat = np.asarray(mat, dtype=float)
    mu = spectral_abscissa(mat)
    k = mat.shape[0]
    scale = max(np.abs(mat).max(), 1.0)
    shift = mu + 1e-8 * scale
    u = np.full(k, 1.0 / np.sqrt(k))
    a = mat - shift * np.eye(k)
    for _ in range(max_iter):
        try:
            v = np.linalg.solve(a, u)
        except np.linalg.LinAlgError:
            shift += 1e-8 * scale
            a = mat - shift * np.eye(k)
            continue
        v = v / np.linalg.norm(v)
        if v @ u < 0:
            v = -v
        done = np.max(np.abs(mat @ v - mu * v)) <= tol * scale
        u = v
        if done:
            break
    else:
        raise EigenFailure("inverse iteration did not converge to the dominant pair")
    if np.any(u <= 0):
        u = np.abs(u)
        if np.max(np.abs(mat @ u - mu * u)) > 1e-8 * scale or np.any(u <= 0):
            raise EigenFailure("dominant eigenvector is not strictly positive")
    return mu, u


@dataclass
class EquilibriumReport:
    """Classification output; `blocks` is populated on the reduced route."""

    pi: np.ndarray
    mu: float
    r0: float
    regime: str
    boundary: bool
    p_endemic: np.ndarray = None
    residuals: dict = field(default_factory=dict)
    iterations: dict = field(default_factory=dict)
    blocks: list = None
    transient: list = None

    def to_json_dict(self):
        out = {
            "pi": self.pi.tolist(),
            "mu": self.mu,
            "r0": self.r0,
            "regime": self.regime,
            "boundary": self.boundary,
            "p_endemic": None if self.p_endemic is None else self.p_endemic.tolist(),
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "iterations": dict(self.iterations),
        }
        if self.blocks is not None:
            out["blocks"] = [
                {
                    "pairs": [[int(v) + 1, int(a) + 1] for v, a in blk["pairs"]],
                    "mu": blk["mu"],
                    "r0": blk["r0"],
                    "regime": blk["regime"],
                    "boundary": blk["boundary"],
                    "p_endemic": None if blk["p_endemic"] is None
                    else np.asarray(blk["p_endemic"]).tolist(),
                }
                for blk in self.blocks
            ]
            out["transient"] = [[int(v) + 1, int(a) + 1] for v, a in self.transient]
        return out


def _infection_matrices(beta, delta, f_dense, l_dense):
    """G = BF* - D - L*, A = (L* + D)^{-1} B, and AF* for given couplings."""
    g = beta[:, None] * f_dense - np.diag(delta) - l_dense
    lhs = l_dense + np.diag(delta)
    try:
        a = np.linalg.solve(lhs, np.diag(beta))
    except np.linalg.LinAlgError as exc:
        raise SolverFailure(f"(L* + D) is singular: {exc}") from exc
    return g, a, a @ f_dense


def _regime(mu, r0):
    boundary = abs(mu) <= BOUNDARY_BAND or abs(r0 - 1.0) <= BOUNDARY_BAND
    if not boundary and (mu > 0) != (r0 > 1):
        raise SolverFailure(
            f"inconsistent classification: mu = {mu:.3e} but R0 = {r0:.6f}")
    endemic = mu > BOUNDARY_BAND
    return ("endemic" if endemic else "DFE-stable"), boundary


def _fixed_point(a, f_dense, report_iter=None):
    """Largest fixed point of H(p) = (I + A(P + (I-P)M))^{-1} A p with
    M = I - F*, approached monotonically from p0 = 1 and from a small
    multiple of the Perron direction of AF*; the two limits must agree."""
    k = a.shape[0]
    m_mat = np.eye(k) - f_dense
    af = a @ f_dense
    eye = np.eye(k)

    def h(p):
        s = eye + a @ (np.diag(p) + np.diag(1.0 - p) @ m_mat)
        return np.linalg.solve(s, a @ p)

    def iterate(p0):
        p = p0
        for it in range(FIXED_POINT_MAX_ITER):
            nxt = h(p)
            if np.max(np.abs(nxt - p)) <= FIXED_POINT_TOL:
                return nxt, it + 1
            p = nxt
        raise NonConvergence(
            f"fixed-point iteration exceeded {FIXED_POINT_MAX_ITER} steps")

    top, it_top = iterate(np.ones(k))

    _r0, u = perron_pair(af)
    eps = 0.5 * float(u.min()) / float(u.max())
    for _ in range(60):
        growth = (h(eps * u) - eps * u) / eps
        if np.all(growth > 0):
            break
        eps *= 0.5
    else:
        raise NonConvergence("no strictly expanding scale along the dominant direction")
    bottom, it_bot = iterate(eps * u)

    gap = float(np.max(np.abs(top - bottom)))
    if gap > FIXED_POINT_AGREEMENT:
        raise NonConvergence(
            f"fixed-point limits from above and below disagree by {gap:.3e}")
    if report_iter is not None:
        report_iter["from_one"] = it_top
        report_iter["from_perron"] = it_bot
    if np.any(top <= 0) or np.any(top >= 1):
        raise SolverFailure("endemic equilibrium must lie strictly inside (0, 1)")
    return top


def _check_assumption2(d, r):
    _bg, dg = r.grids()
    for a in range(d.m):
        if not np.any(dg[a] > 0):
            raise AssumptionViolated(
                f"layer {a + 1} has no node with positive recovery rate")


def classify(d, r):
    """EquilibriumReport for a dispersal whose layers are all strongly
    connected: stationary profile, mu, R0, regime, and the endemic
    equilibrium whenever mu > 0."""
    if not all(validate_strong_connectivity(d)):
        raise AssumptionViolated(
            "a layer is not strongly connected; use classify_reduced")
    _check_assumption2(d, r)
    x_star = d.stationary_profile()
    f_dense = assemble_F(d, x_star).dense()
    l_dense = assemble_L(d, x_star).dense()
    g, a, af = _infection_matrices(r.beta, r.delta, f_dense, l_dense)
    mu = spectral_abscissa(g)
    r0 = float(np.max(np.abs(np.linalg.eigvals(af))))
    regime, boundary = _regime(mu, r0)

    stationary_res = max(
        float(np.max(np.abs(layer.q.T @ (x_star.reshape(d.m, d.n)[i] / N))))
        for i, (layer, N) in enumerate(zip(d.layers, d.populations)))
    report = EquilibriumReport(
        pi=x_star, mu=float(mu), r0=r0, regime=regime, boundary=boundary,
        residuals={"stationary": stationary_res})
    if regime == "endemic":
        iters = {}
        p_star = _fixed_point(a, f_dense, iters)
        dp, _dx = full_rhs(d, r, SystemState(p_star, x_star))
        res = float(np.max(np.abs(dp)))
        if res > RHS_RESIDUAL_TOL:
            raise SolverFailure(f"endemic equilibrium residual {res:.3e}")
        report.p_endemic = p_star
        report.residuals["fixed_point"] = res
        report.iterations = iters
    return report


def endemic_fixed_point(d, r):
    """The strictly positive endemic equilibrium; NotEndemic when mu <= 0."""
    report = classify(d, r)
    if report.regime != "endemic":
        raise NotEndemic(f"mu = {report.mu:.3e} <= 0; no endemic equilibrium")
    return report.p_endemic


def classify_reduced(d, r, x0=None):
    """Per-merged-block classification for dispersals with reducible layers.

    x0 (flat layer-major, default: each layer's population spread uniformly
    over the nodes) fixes how transient mass is absorbed into the sinks and
    thereby the equilibrium profile.  Requires every sink component to hold a
    node with positive recovery.
    """
    rs = build_reduced_system(d, r)
    _bg, dg = r.grids()
    for a in range(d.m):
        for comp in rs.structure.sinks[a]:
            if not np.any(dg[a, list(comp)] > 0):
                raise AssumptionViolated(
                    f"sink {tuple(v + 1 for v in comp)} of layer {a + 1} has no "
                    "node with positive recovery")
    if x0 is None:
        x0 = np.repeat(np.asarray(d.populations, dtype=float) / d.n, d.n)
    x_star = absorbed_profile(d, x0)

    f_bar = assemble_F_bar(d, rs, x_star)
    l_bar = assemble_L_bar(d, rs, x_star).dense()
    blocks = []
    p_end = np.zeros(rs.n_bar)
    any_endemic = False
    mu_all, r0_all = [], []
    for blk_pairs, pos in zip(rs.structure.merged_blocks, rs.block_positions):
        idx = np.ix_(pos, pos)
        fb = f_bar[idx]
        lb = l_bar[idx]
        beta_b = rs.bar_beta[pos]
        delta_b = rs.bar_delta[pos]
        g, a_mat, af = _infection_matrices(beta_b, delta_b, fb, lb)
        mu = float(spectral_abscissa(g))
        r0 = float(np.max(np.abs(np.linalg.eigvals(af))))
        regime, boundary = _regime(mu, r0)
        entry = {"pairs": blk_pairs, "mu": mu, "r0": r0, "regime": regime,
                 "boundary": boundary, "p_endemic": None}
        if regime == "endemic":
            p_star = _fixed_point(a_mat, fb)
            res = float(np.max(np.abs(
                (1.0 - p_star) * (beta_b * (fb @ p_star)) - delta_b * p_star
                - lb @ p_star)))
            if res > RHS_RESIDUAL_TOL:
                raise SolverFailure(f"reduced equilibrium residual {res:.3e}")
            entry["p_endemic"] = p_star
            p_end[pos] = p_star
            any_endemic = True
        blocks.append(entry)
        mu_all.append(mu)
        r0_all.append(r0)

    mu = max(mu_all)
    r0 = max(r0_all)
    return EquilibriumReport(
        pi=x_star, mu=mu, r0=r0,
        regime="endemic" if any_endemic else "DFE-stable",
        boundary=any(b["boundary"] for b in blocks),
        p_endemic=p_end if any_endemic else None,
        residuals={}, blocks=blocks, transient=list(rs.hat_pairs))

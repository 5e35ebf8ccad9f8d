"""Budgeted rate intervention: minimize the stability margin mu over
box-bounded infection/recovery rates under a posynomial budget.

The nonpositive parts of G = B F* - D - L* are removed by an exact shift:
with nu_bar = max nu_i^a, Lshift = nu_bar I - L* is entrywise nonnegative;
with Delta_bar = max over the recovery upper bounds, dhat = Delta_bar + 1 -
delta stays positive on the box, and

    mu(B F* - D - L*) = mu(B F* + diag(dhat) + Lshift) - Delta_bar - 1 - nu_bar.

The right-hand matrix is nonnegative and irreducible, so its abscissa is the
Perron root lambda = inf {max_i (M u)_i / u_i : u >> 0}, which turns the
minimization into a geometric program: monomial ratio constraints in
(lambda, u, beta, dhat) plus the posynomial budget.  It is solved in log
variables with a log-barrier interior-point loop (t-scaling 10, damped Newton
with backtracking), self-contained on purpose.
"""

from dataclasses import dataclass

import numpy as np

from .errors import Infeasible, MaxIterations, SolverFailure
from .model import assemble_F, assemble_L
from .network import validate_strong_connectivity
from .equilibria import perron_pair, spectral_abscissa

BARRIER_T0 = 1.0
BARRIER_SCALE = 10.0
GAP_TOL = 1e-7
NEWTON_TOL = 1e-8
NEWTON_MAX = 50


@dataclass(frozen=True)
class PosynomialCost:
    """Sum of coeff * v**exponent terms in one scalar resource variable.

    Non-constant terms need positive coefficients; constant terms may carry
    either sign and are moved to the budget's right-hand side.
    """

    terms: tuple

    def __post_init__(self):
        terms = tuple((float(c), float(a)) for c, a in self.terms)
        for c, a in terms:
            if a != 0.0 and c <= 0:
                raise ValueError("non-constant cost terms must have positive coefficients")
        object.__setattr__(self, "terms", terms)

    def value(self, v):
        return sum(c * v ** a for c, a in self.terms)

    def constant(self):
        return sum(c for c, a in self.terms if a == 0.0)

    def variable_terms(self):
        return [(c, a) for c, a in self.terms if a != 0.0]

    def log_argmin(self, lo, hi, iters=200):
        """log of the cost minimizer over [lo, hi] (the cost is convex in
        log v, so ternary search applies)."""
        a, b = np.log(lo), np.log(hi)
        for _ in range(iters):
            m1 = a + (b - a) / 3
            m2 = b - (b - a) / 3
            if self.value(np.exp(m1)) <= self.value(np.exp(m2)):
                b = m2
            else:
                a = m1
        return 0.5 * (a + b)


def inverse_gap_cost(free_end):
    """Reciprocal-gap cost 1/v - 1/free_end: zero at the free end of the box
    and growing without bound as v -> 0."""
    return PosynomialCost(((1.0, -1.0), (-1.0 / free_end, 0.0)))


def inverse_gap_problem(d, beta_lower, beta_upper, delta_lower, delta_upper,
                        budget):
    """InterventionProblem with reciprocal-gap costs on every coordinate:
    beta costs nothing at its upper bound, delta costs nothing at its lower
    bound (in the shifted variable, dhat costs nothing at its upper bound)."""
    k = d.n * d.m

    def vec(v):
        v = np.asarray(v, dtype=float)
        return np.full(k, float(v)) if v.ndim == 0 else v.reshape(-1)
    bu = vec(beta_upper)
    dl = vec(delta_lower)
    delta_bar = float(vec(delta_upper).max())
    cost_beta = tuple(inverse_gap_cost(bu[i]) for i in range(k))
    cost_dhat = tuple(inverse_gap_cost(delta_bar + 1.0 - dl[i]) for i in range(k))
    return InterventionProblem(
        d=d, beta_lower=beta_lower, beta_upper=beta_upper,
        delta_lower=delta_lower, delta_upper=delta_upper,
        cost_beta=cost_beta, cost_dhat=cost_dhat, budget=float(budget))


@dataclass(frozen=True)
class InterventionProblem:
    """Box bounds, per-coordinate costs, and the budget.

    Costs for the infection rates are posynomials in beta; costs for the
    recovery rates are posynomials in the shifted variable
    dhat = Delta_bar + 1 - delta, so pushing delta toward its upper bound
    means pushing dhat down.
    """

    d: object
    beta_lower: np.ndarray
    beta_upper: np.ndarray
    delta_lower: np.ndarray
    delta_upper: np.ndarray
    cost_beta: tuple
    cost_dhat: tuple
    budget: float

    def __post_init__(self):
        k = self.d.n * self.d.m

        def vec(v):
            v = np.asarray(v, dtype=float)
            return np.full(k, float(v)) if v.ndim == 0 else v.reshape(-1)
        bl, bu = vec(self.beta_lower), vec(self.beta_upper)
        dl, du = vec(self.delta_lower), vec(self.delta_upper)
        for name, v in (("beta_lower", bl), ("beta_upper", bu),
                        ("delta_lower", dl), ("delta_upper", du)):
            if v.shape != (k,):
                raise ValueError(f"{name} must broadcast to {k} coordinates")
        if np.any(bl <= 0) or np.any(dl <= 0):
            raise ValueError("rate bounds must be positive")
        if np.any(bl >= bu) or np.any(dl >= du):
            raise ValueError("bounds must be strictly ordered (lower < upper)")
        cb = tuple(self.cost_beta) if not isinstance(self.cost_beta, PosynomialCost) \
            else (self.cost_beta,) * k
        cd = tuple(self.cost_dhat) if not isinstance(self.cost_dhat, PosynomialCost) \
            else (self.cost_dhat,) * k
        if len(cb) != k or len(cd) != k:
            raise ValueError("need one cost per coordinate (or a single shared cost)")
        object.__setattr__(self, "beta_lower", bl)
        object.__setattr__(self, "beta_upper", bu)
        object.__setattr__(self, "delta_lower", dl)
        object.__setattr__(self, "delta_upper", du)
        object.__setattr__(self, "cost_beta", cb)
        object.__setattr__(self, "cost_dhat", cd)

    @property
    def k(self):
        return self.d.n * self.d.m

    @property
    def delta_bar(self):
        return float(self.delta_upper.max())

    def dhat_bounds(self):
        """dhat decreases as delta increases: [Delta_bar+1-du, Delta_bar+1-dl]."""
        shift = self.delta_bar + 1.0
        return shift - self.delta_upper, shift - self.delta_lower

    def delta_to_dhat(self, delta):
        return self.delta_bar + 1.0 - np.asarray(delta, dtype=float)

    def dhat_to_delta(self, dhat):
        return self.delta_bar + 1.0 - np.asarray(dhat, dtype=float)

    def total_cost(self, beta, dhat):
        return float(sum(c.value(v) for c, v in zip(self.cost_beta, beta))
                     + sum(c.value(v) for c, v in zip(self.cost_dhat, dhat)))


@dataclass(frozen=True)
class ShiftedSystem:
    """Shift data: nonnegative Lshift = nu_bar I - L*, the scalars, and the
    share grid needed to rebuild B F* + diag(dhat) + Lshift."""

    l_shift: np.ndarray
    f_dense: np.ndarray
    delta_bar: float
    nu_bar: float

    @property
    def offset(self):
        return self.delta_bar + 1.0 + self.nu_bar

    def matrix(self, beta, dhat):
        return beta[:, None] * self.f_dense + np.diag(dhat) + self.l_shift

    def mu_from_lambda(self, lam):
        return lam - self.offset

    def mu_direct(self, beta, delta):
        """Spectral abscissa of B F* - D - L* at the given rates."""
        k = self.f_dense.shape[0]
        l_star = self.nu_bar * np.eye(k) - self.l_shift
        return spectral_abscissa(beta[:, None] * self.f_dense - np.diag(delta) - l_star)


def shift_transform(d, delta_upper):
    """Build the ShiftedSystem at the stationary profile."""
    if not all(validate_strong_connectivity(d)):
        raise ValueError("intervention assumes strongly connected layers")
    x_star = d.stationary_profile()
    l_dense = assemble_L(d, x_star).dense()
    f_dense = assemble_F(d, x_star).dense()
    nu_bar = float(max(g.exit_rates.max() for g in d.layers))
    delta_bar = float(np.max(delta_upper))
    l_shift = nu_bar * np.eye(d.n * d.m) - l_dense
    if l_shift.min() < -1e-12:
        raise SolverFailure("shifted coupling has a negative entry")
    return ShiftedSystem(np.maximum(l_shift, 0.0), f_dense, delta_bar, nu_bar)


@dataclass
class InterventionResult:
    beta: np.ndarray
    delta: np.ndarray
    lambda_opt: float
    mu_achieved: float
    mu_eigen: float
    budget_used: float
    budget: float
    u: np.ndarray
    iterations: int
    gap: float
    newton_decrement: float
    feasible: bool
    strategy: str

    def to_json_dict(self):
        return {
            "strategy": self.strategy,
            "beta": self.beta.tolist(),
            "delta": self.delta.tolist(),
            "lambda_opt": self.lambda_opt,
            "mu_achieved": self.mu_achieved,
            "mu_eigen": self.mu_eigen,
            "budget": self.budget,
            "budget_used": self.budget_used,
            "u": self.u.tolist(),
            "iterations": self.iterations,
            "gap": self.gap,
            "newton_decrement": self.newton_decrement,
            "feasible": self.feasible,
        }


class _LogSumExp:
    """One constraint log sum_j exp(A_j . y + b_j) <= 0."""

    __slots__ = ("a", "b")

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)

    def value(self, y):
        z = self.a @ y + self.b
        zmax = z.max()
        return zmax + np.log(np.exp(z - zmax).sum())

    def grad_hess(self, y):
        z = self.a @ y + self.b
        z = z - z.max()
        w = np.exp(z)
        w = w / w.sum()
        g = self.a.T @ w
        h = self.a.T @ (self.a * w[:, None]) - np.outer(g, g)
        return g, h


def _build_constraints(problem, shifted):
    """Constraint list in variables y = [log lambda, log u_2.., log beta,
    log dhat]; u_1 is pinned to 1 (the ratio constraints are invariant under
    uniform scaling of u)."""
    k = problem.k
    dim = 3 * k  # lambda, u_2..u_k, beta_1..k, dhat_1..k
    col_lam = 0

    def col_u(i):
        return None if i == 0 else i

    def col_b(i):
        return k + i

    def col_d(i):
        return 2 * k + i

    cons = []
    f = shifted.f_dense
    ls = shifted.l_shift
    n = problem.d.n
    m = problem.d.m
    for i in range(k):
        rows_a, rows_b = [], []
        node = i % n

        def add(coeff, cols):
            row = np.zeros(dim)
            for c, e in cols:
                if c is not None:
                    row[c] += e
            rows_a.append(row)
            rows_b.append(np.log(coeff))

        for s in range(m):
            j = s * n + node
            if f[i, j] > 0:
                add(f[i, j], [(col_b(i), 1), (col_u(j), 1),
                              (col_u(i), -1), (col_lam, -1)])
        add(1.0, [(col_d(i), 1), (col_lam, -1)])
        for j in range(k):
            if ls[i, j] > 0:
                add(ls[i, j], [(col_u(j), 1), (col_u(i), -1), (col_lam, -1)])
        cons.append(_LogSumExp(np.vstack(rows_a), np.array(rows_b)))

    # budget: move constants to the right-hand side
    consts = sum(c.constant() for c in problem.cost_beta) \
        + sum(c.constant() for c in problem.cost_dhat)
    c_rhs = problem.budget - consts
    rows_a, rows_b = [], []
    for i, cost in enumerate(problem.cost_beta):
        for c, a in cost.variable_terms():
            row = np.zeros(dim)
            row[col_b(i)] = a
            rows_a.append(row)
            rows_b.append(np.log(c))
    for i, cost in enumerate(problem.cost_dhat):
        for c, a in cost.variable_terms():
            row = np.zeros(dim)
            row[col_d(i)] = a
            rows_a.append(row)
            rows_b.append(np.log(c))
    if rows_a:
        if c_rhs <= 0:
            raise Infeasible(
                f"budget {problem.budget} cannot cover the constant cost part "
                f"{consts:.6g}")
        cons.append(_LogSumExp(np.vstack(rows_a),
                               np.array(rows_b) - np.log(c_rhs)))

    # box bounds as single-term constraints
    dh_lo, dh_hi = problem.dhat_bounds()
    for i in range(k):
        for col, lo, hi in ((col_b(i), problem.beta_lower[i], problem.beta_upper[i]),
                            (col_d(i), dh_lo[i], dh_hi[i])):
            up = np.zeros(dim)
            up[col] = 1.0
            cons.append(_LogSumExp(up[None, :], np.array([-np.log(hi)])))
            dn = np.zeros(dim)
            dn[col] = -1.0
            cons.append(_LogSumExp(dn[None, :], np.array([np.log(lo)])))
    return cons, dim


def _feasible(cons, y):
    return all(c.value(y) < 0 for c in cons)


def _barrier_solve(cons, dim, y0):
    """Minimize y[0] subject to all logsumexp constraints < 0."""
    c_obj = np.zeros(dim)
    c_obj[0] = 1.0
    y = y0.copy()
    if not _feasible(cons, y):
        raise Infeasible("initial point is not strictly feasible")
    t = BARRIER_T0
    total_newton = 0
    decrement = np.inf
    while True:
        for _ in range(NEWTON_MAX):
            grad = t * c_obj
            hess = np.zeros((dim, dim))
            for c in cons:
                v = c.value(y)
                g, h = c.grad_hess(y)
                grad += g / (-v)
                hess += np.outer(g, g) / v ** 2 + h / (-v)
            try:
                step = np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(hess, -grad, rcond=None)[0]
            decrement = float(-grad @ step)
            if decrement / 2 <= NEWTON_TOL:
                break
            # backtracking line search keeping strict feasibility
            def merit(yy):
                return t * yy[0] - sum(np.log(-c.value(yy)) for c in cons)
            base = merit(y)
            alpha = 1.0
            while alpha > 1e-14:
                cand = y + alpha * step
                if _feasible(cons, cand) and merit(cand) <= base + 0.25 * alpha * (grad @ step):
                    break
                alpha *= 0.5
            else:
                raise MaxIterations("line search stalled")
            y = y + alpha * step
            total_newton += 1
        if len(cons) / t <= GAP_TOL:
            return y, total_newton, len(cons) / t, decrement
        t *= BARRIER_SCALE
        if t > 1e18:
            raise MaxIterations("barrier parameter overflow")


def _low_cost_point(problem):
    """Per-coordinate cost minimizers in log space, and the total cost there."""
    dh_lo, dh_hi = problem.dhat_bounds()
    yb = np.array([c.log_argmin(problem.beta_lower[i], problem.beta_upper[i])
                   for i, c in enumerate(problem.cost_beta)])
    yd = np.array([c.log_argmin(dh_lo[i], dh_hi[i])
                   for i, c in enumerate(problem.cost_dhat)])
    total = problem.total_cost(np.exp(yb), np.exp(yd))
    return yb, yd, total


def _corner_result(problem, shifted, beta, dhat):
    delta = problem.dhat_to_delta(dhat)
    mat = shifted.matrix(beta, dhat)
    lam = spectral_abscissa(mat)
    mu = shifted.mu_from_lambda(lam)
    _lam, u = perron_pair(mat)
    return InterventionResult(
        beta=beta, delta=delta, lambda_opt=float(lam), mu_achieved=float(mu),
        mu_eigen=float(shifted.mu_direct(beta, delta)),
        budget_used=problem.total_cost(beta, dhat), budget=problem.budget,
        u=u / u.max(), iterations=0, gap=0.0, newton_decrement=0.0,
        feasible=True, strategy="gp-corner")


def solve_gp(problem):
    """Geometric-program intervention: returns the box/budget-feasible rates
    minimizing the shifted Perron root, with the certificate direction u."""
    shifted = shift_transform(problem.d, problem.delta_upper)
    k = problem.k
    dh_lo, dh_hi = problem.dhat_bounds()

    yb_min, yd_min, min_cost = _low_cost_point(problem)
    slack = problem.budget - min_cost
    scale = max(abs(problem.budget), abs(min_cost), 1.0)
    if slack < -1e-9 * scale:
        raise Infeasible(
            f"cheapest admissible rates cost {min_cost:.6g} > budget "
            f"{problem.budget:.6g}")
    if slack <= 1e-9 * scale:
        # feasible set collapses to the cost minimizer; nothing to optimize
        return _corner_result(problem, shifted, np.exp(yb_min), np.exp(yd_min))

    # initial point: geometric means, pulled toward the cost minimizer until
    # the budget is strictly met
    yb_gm = 0.5 * (np.log(problem.beta_lower) + np.log(problem.beta_upper))
    yd_gm = 0.5 * (np.log(dh_lo) + np.log(dh_hi))
    theta = 1.0
    for _ in range(60):
        yb = theta * yb_gm + (1 - theta) * yb_min
        yd = theta * yd_gm + (1 - theta) * yd_min
        if problem.total_cost(np.exp(yb), np.exp(yd)) <= problem.budget - 0.1 * slack:
            break
        theta *= 0.5
    else:
        yb, yd = yb_min, yd_min

    beta0 = np.exp(yb)
    dhat0 = np.exp(yd)
    lam0 = 2.0 * float(shifted.matrix(beta0, dhat0).sum(axis=1).max())

    cons, dim = _build_constraints(problem, shifted)
    y0 = np.concatenate([[np.log(lam0)], np.zeros(k - 1), yb, yd])
    y, iters, gap, decrement = _barrier_solve(cons, dim, y0)

    lam = float(np.exp(y[0]))
    u = np.concatenate([[1.0], np.exp(y[1:k])])
    beta = np.clip(np.exp(y[k:2 * k]), problem.beta_lower, problem.beta_upper)
    dhat = np.clip(np.exp(y[2 * k:3 * k]), dh_lo, dh_hi)
    delta = problem.dhat_to_delta(dhat)
    mu = shifted.mu_from_lambda(lam)
    mu_eig = float(shifted.mu_direct(beta, delta))
    return InterventionResult(
        beta=beta, delta=delta, lambda_opt=lam, mu_achieved=float(mu),
        mu_eigen=mu_eig, budget_used=problem.total_cost(beta, dhat),
        budget=problem.budget, u=u / u.max(), iterations=iters, gap=float(gap),
        newton_decrement=float(decrement), feasible=True, strategy="gp")


def _invert_cost(cost, cheap, expensive, target, iters=100):
    """Resource level whose cost equals `target`, between the cheap and
    expensive ends (cost must be monotone along that segment)."""
    lo_val = cost.value(cheap)
    hi_val = cost.value(expensive)
    grid = np.linspace(cheap, expensive, 17)
    vals = [cost.value(v) for v in grid]
    if np.any(np.diff(vals) * np.sign(hi_val - lo_val) < -1e-12 * max(1.0, abs(hi_val))):
        raise ValueError("cost is not monotone between its cheap and expensive ends")
    if target >= hi_val:
        return expensive
    if target <= lo_val:
        return cheap
    a, b = cheap, expensive
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if (cost.value(mid) - target) * np.sign(hi_val - lo_val) < 0:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def naive_allocation(problem):
    """Equal per-coordinate budget C/(nm); within each coordinate the
    recovery resource is bought first (delta pushed toward its upper bound,
    i.e. dhat toward its lower bound), the remainder goes to the infection
    rate, and whatever cannot be spent is left unused."""
    shifted = shift_transform(problem.d, problem.delta_upper)
    k = problem.k
    dh_lo, dh_hi = problem.dhat_bounds()
    per = problem.budget / k
    beta = np.empty(k)
    dhat = np.empty(k)
    for i in range(k):
        g = problem.cost_dhat[i]
        g_cheap = g.value(dh_hi[i])
        g_full = g.value(dh_lo[i])
        spend_g = min(per, max(g_full - g_cheap, 0.0))
        dhat[i] = _invert_cost(g, dh_hi[i], dh_lo[i], g_cheap + spend_g)
        f = problem.cost_beta[i]
        f_cheap = f.value(problem.beta_upper[i])
        f_full = f.value(problem.beta_lower[i])
        left = per - spend_g
        spend_f = min(left, max(f_full - f_cheap, 0.0))
        beta[i] = _invert_cost(f, problem.beta_upper[i], problem.beta_lower[i],
                               f_cheap + spend_f)
    delta = problem.dhat_to_delta(dhat)
    mu = float(shifted.mu_direct(beta, delta))
    lam = mu + shifted.offset
    mat = shifted.matrix(beta, dhat)
    _lam, u = perron_pair(mat)
    return InterventionResult(
        beta=beta, delta=delta, lambda_opt=float(lam), mu_achieved=mu,
        mu_eigen=mu, budget_used=problem.total_cost(beta, dhat),
        budget=problem.budget, u=u / u.max(), iterations=0, gap=0.0,
        newton_decrement=0.0, feasible=True, strategy="naive")


def budget_sweep(problem, budgets):
    """(C, mu_gp, mu_naive, used_gp, used_naive) rows over a budget grid."""
    rows = []
    for c in budgets:
        p = InterventionProblem(
            d=problem.d, beta_lower=problem.beta_lower, beta_upper=problem.beta_upper,
            delta_lower=problem.delta_lower, delta_upper=problem.delta_upper,
            cost_beta=problem.cost_beta, cost_dhat=problem.cost_dhat, budget=float(c))
        gp = solve_gp(p)
        nv = naive_allocation(p)
        rows.append({"C": float(c), "mu_gp": gp.mu_achieved, "mu_naive": nv.mu_achieved,
                     "used_gp": gp.budget_used, "used_naive": nv.budget_used,
                     "gp": gp, "naive": nv})
    return rows

"""Scenario files: a single JSON document describing the network, the
epidemic rates, simulation settings, and (optionally) an intervention
problem.  Validation errors carry the JSON path of the offending field
(e.g. ``network.layers[1].n``).

Node indices inside config files are 1-based, matching the exported CSV/JSON
convention; everything internal is 0-based.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import SchemaError
from .intervene import InterventionProblem, PosynomialCost, inverse_gap_cost
from .model import EpidemicRates
from .network import (LayerGenerator, MultiLayerDispersal,
                      construct_metropolis_rates, equal_split_rates,
                      topology_adjacency)

_TOPOLOGIES = ("complete", "line", "ring", "star", "custom")
_CONSTRUCTIONS = ("explicit", "equal-split", "metropolis")
_MODES = ("ode", "stochastic")


def _expect(cond, path, message):
    if not cond:
        raise SchemaError(path, message)


def _get(obj, key, path, required=True, default=None):
    if key not in obj:
        _expect(not required, f"{path}.{key}", "missing required field")
        return default
    return obj[key]


def _number(value, path, positive=False, nonnegative=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, "expected a number")
    v = float(value)
    if positive and v <= 0:
        raise SchemaError(path, "must be positive")
    if nonnegative and v < 0:
        raise SchemaError(path, "must be nonnegative")
    return v


def _integer(value, path, positive=False):
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(path, "expected an integer")
    if positive and value <= 0:
        raise SchemaError(path, "must be a positive integer")
    return value


def _number_list(value, path, length=None):
    if not isinstance(value, list):
        raise SchemaError(path, "expected a list of numbers")
    out = np.array([_number(v, f"{path}[{i}]") for i, v in enumerate(value)])
    if length is not None and out.size != length:
        raise SchemaError(path, f"expected {length} entries, found {out.size}")
    return out


def _adjacency_from_edges(edges, n, path):
    adj = np.zeros((n, n))
    if not isinstance(edges, list):
        raise SchemaError(path, "expected a list of [i, j] pairs")
    for k, e in enumerate(edges):
        p = f"{path}[{k}]"
        if not (isinstance(e, list) and len(e) == 2):
            raise SchemaError(p, "expected an [i, j] pair")
        i = _integer(e[0], f"{p}[0]", positive=True)
        j = _integer(e[1], f"{p}[1]", positive=True)
        if i > n or j > n:
            raise SchemaError(p, f"node index out of range 1..{n}")
        if i == j:
            raise SchemaError(p, "self-loops are not allowed")
        adj[i - 1, j - 1] = 1.0
        adj[j - 1, i - 1] = 1.0
    return adj


def _build_layer(layer, n_expected, idx):
    path = f"network.layers[{idx}]"
    if not isinstance(layer, dict):
        raise SchemaError(path, "expected an object")
    n = _integer(_get(layer, "n", path), f"{path}.n", positive=True)
    if n_expected is not None and n != n_expected:
        raise SchemaError(f"{path}.n",
                          f"node count {n} differs from layer 0 ({n_expected})")
    population = _number(_get(layer, "population", path),
                         f"{path}.population", positive=True)
    topology = _get(layer, "topology", path)
    _expect(topology in _TOPOLOGIES, f"{path}.topology",
            f"expected one of {_TOPOLOGIES}")
    if topology == "custom":
        adj = _adjacency_from_edges(_get(layer, "edges", path),
                                    n, f"{path}.edges")
    else:
        adj = topology_adjacency(topology, n)

    rates = _get(layer, "rates", path)
    rpath = f"{path}.rates"
    if not isinstance(rates, dict):
        raise SchemaError(rpath, "expected an object")
    construction = _get(rates, "construction", rpath)
    _expect(construction in _CONSTRUCTIONS, f"{rpath}.construction",
            f"expected one of {_CONSTRUCTIONS}")
    try:
        if construction == "explicit":
            q = _get(rates, "q", rpath)
            if not isinstance(q, list) or len(q) != n:
                raise SchemaError(f"{rpath}.q", f"expected an {n}x{n} matrix")
            rows = [_number_list(row, f"{rpath}.q[{i}]", length=n)
                    for i, row in enumerate(q)]
            g = LayerGenerator(np.vstack(rows))
        elif construction == "equal-split":
            nu = _number(_get(rates, "total_rate", rpath),
                         f"{rpath}.total_rate", positive=True)
            g = equal_split_rates(adj, nu)
        else:
            nu = _number(_get(rates, "total_rate", rpath),
                         f"{rpath}.total_rate", positive=True)
            target = _number_list(_get(rates, "target", rpath),
                                  f"{rpath}.target", length=n)
            if np.any(target <= 0):
                raise SchemaError(f"{rpath}.target",
                                  "target distribution must be strictly positive")
            g = construct_metropolis_rates(adj, target, nu)
    except SchemaError:
        raise
    except ValueError as exc:
        raise SchemaError(rpath, str(exc)) from exc
    return g, population


def _build_network(doc):
    network = _get(doc, "network", "$")
    if not isinstance(network, dict):
        raise SchemaError("network", "expected an object")
    layers = _get(network, "layers", "network")
    if not isinstance(layers, list) or not layers:
        raise SchemaError("network.layers", "expected a non-empty list")
    gens, pops = [], []
    n_expected = None
    for idx, layer in enumerate(layers):
        g, pop = _build_layer(layer, n_expected, idx)
        if n_expected is None:
            n_expected = g.n
        gens.append(g)
        pops.append(pop)
    return MultiLayerDispersal(tuple(gens), tuple(pops))


def _rate_vector(value, d, path):
    """Scalar, per-node list (length n), or per-(node,layer) nested list
    [[layer 0 nodes...], ...] / flat list of length n*m."""
    n, m = d.n, d.m
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return np.full(n * m, float(value))
    if isinstance(value, dict):
        per_node = _number_list(_get(value, "per_node", path),
                                f"{path}.per_node", length=n)
        return np.tile(per_node, m)
    if isinstance(value, list):
        if value and isinstance(value[0], list):
            if len(value) != m:
                raise SchemaError(path, f"expected {m} per-layer lists")
            rows = [_number_list(row, f"{path}[{a}]", length=n)
                    for a, row in enumerate(value)]
            return np.concatenate(rows)
        flat = _number_list(value, path)
        if flat.size == n:
            return np.tile(flat, m)
        if flat.size == n * m:
            return flat
        raise SchemaError(path, f"expected {n} or {n * m} entries, found {flat.size}")
    raise SchemaError(path, "expected a number, list, or {per_node: [...]}")


def _build_rates(doc, d):
    rates = _get(doc, "rates", "$", required=False)
    if rates is None:
        return None
    if not isinstance(rates, dict):
        raise SchemaError("rates", "expected an object")
    beta = _rate_vector(_get(rates, "beta", "rates"), d, "rates.beta")
    delta = _rate_vector(_get(rates, "delta", "rates"), d, "rates.delta")
    if np.any(beta <= 0):
        raise SchemaError("rates.beta", "infection rates must be positive")
    if np.any(delta < 0):
        raise SchemaError("rates.delta", "recovery rates must be nonnegative")
    return EpidemicRates(beta, delta, d.n, d.m)


@dataclass(frozen=True)
class SimulationSettings:
    mode: str = "ode"
    t_end: float = 10.0
    step: float = 0.01
    dt: float = 0.01
    seed: int = 0
    replicas: int = 1
    store_every: int = 1
    p0: np.ndarray = None
    counts: np.ndarray = None
    x0_mode: str = "counts"

    def initial_x(self, d):
        if self.x0_mode == "stationary" or self.counts is None:
            return d.stationary_profile()
        return self.counts.reshape(-1).astype(float)


def _build_simulation(doc, d):
    sim = _get(doc, "simulation", "$", required=False, default={})
    if not isinstance(sim, dict):
        raise SchemaError("simulation", "expected an object")
    path = "simulation"
    mode = _get(sim, "mode", path, required=False, default="ode")
    _expect(mode in _MODES, f"{path}.mode", f"expected one of {_MODES}")
    t_end = _number(_get(sim, "t_end", path, required=False, default=10.0),
                    f"{path}.t_end", positive=True)
    step = _number(_get(sim, "step", path, required=False, default=0.01),
                   f"{path}.step", positive=True)
    dt = _number(_get(sim, "dt", path, required=False, default=0.01),
                 f"{path}.dt", positive=True)
    seed = _integer(_get(sim, "seed", path, required=False, default=0),
                    f"{path}.seed")
    replicas = _integer(_get(sim, "replicas", path, required=False, default=1),
                        f"{path}.replicas", positive=True)
    store_every = _integer(_get(sim, "store_every", path, required=False,
                                default=1), f"{path}.store_every", positive=True)

    p0_raw = _get(sim, "p0", path, required=False, default=0.01)
    p0 = _rate_vector(p0_raw, d, f"{path}.p0")
    if np.any(p0 < 0) or np.any(p0 > 1):
        raise SchemaError(f"{path}.p0", "entries must lie in [0, 1]")

    counts_raw = _get(sim, "counts", path, required=False)
    counts = None
    if counts_raw is not None:
        if not (isinstance(counts_raw, list) and len(counts_raw) == d.m):
            raise SchemaError(f"{path}.counts",
                              f"expected {d.m} per-layer lists")
        rows = []
        for a, row in enumerate(counts_raw):
            vals = _number_list(row, f"{path}.counts[{a}]", length=d.n)
            if np.any(vals < 0) or np.any(vals != np.round(vals)):
                raise SchemaError(f"{path}.counts[{a}]",
                                  "entries must be nonnegative integers")
            rows.append(vals.astype(np.int64))
        counts = np.vstack(rows)

    x0_mode = _get(sim, "x0", path, required=False,
                   default="counts" if counts is not None else "stationary")
    _expect(x0_mode in ("counts", "stationary"), f"{path}.x0",
            "expected 'counts' or 'stationary'")
    if x0_mode == "counts" and counts is None:
        raise SchemaError(f"{path}.x0",
                          "x0='counts' requires a counts section")
    return SimulationSettings(mode, t_end, step, dt, seed, replicas,
                              store_every, p0, counts, x0_mode)


def _cost_list(value, d, path):
    """Either one term list (shared by all coordinates) or nm term lists."""
    k = d.n * d.m

    def one(terms, p):
        if not isinstance(terms, list) or not terms:
            raise SchemaError(p, "expected a non-empty list of cost terms")
        parsed = []
        for i, t in enumerate(terms):
            tp = f"{p}[{i}]"
            if not isinstance(t, dict):
                raise SchemaError(tp, "expected {coeff, exponent}")
            c = _number(_get(t, "coeff", tp), f"{tp}.coeff")
            a = _number(_get(t, "exponent", tp), f"{tp}.exponent")
            parsed.append((c, a))
        try:
            return PosynomialCost(tuple(parsed))
        except ValueError as exc:
            raise SchemaError(p, str(exc)) from exc
    if not isinstance(value, list) or not value:
        raise SchemaError(path, "expected a list")
    if isinstance(value[0], dict):
        shared = one(value, path)
        return (shared,) * k
    if len(value) != k:
        raise SchemaError(path, f"expected {k} cost term lists")
    return tuple(one(v, f"{path}[{i}]") for i, v in enumerate(value))


@dataclass(frozen=True)
class InterventionSpec:
    beta_lower: np.ndarray
    beta_upper: np.ndarray
    delta_lower: np.ndarray
    delta_upper: np.ndarray
    cost_beta: tuple
    cost_dhat: tuple
    budget: float
    budget_grid: np.ndarray

    def problem(self, d, budget=None):
        c = self.budget if budget is None else float(budget)
        if c is None:
            raise SchemaError("intervention.budget",
                              "no budget given (config or --budget)")
        return InterventionProblem(
            d=d, beta_lower=self.beta_lower, beta_upper=self.beta_upper,
            delta_lower=self.delta_lower, delta_upper=self.delta_upper,
            cost_beta=self.cost_beta, cost_dhat=self.cost_dhat, budget=c)


def _bounds_pair(value, d, path):
    if not isinstance(value, list) or len(value) != 2:
        raise SchemaError(path, "expected [lower, upper]")
    lo = _rate_vector(value[0], d, f"{path}[0]")
    hi = _rate_vector(value[1], d, f"{path}[1]")
    if np.any(lo <= 0):
        raise SchemaError(f"{path}[0]", "bounds must be positive")
    if np.any(lo >= hi):
        raise SchemaError(path, "lower bound must be strictly below upper")
    return lo, hi


def _build_intervention(doc, d):
    iv = _get(doc, "intervention", "$", required=False)
    if iv is None:
        return None
    if not isinstance(iv, dict):
        raise SchemaError("intervention", "expected an object")
    path = "intervention"
    bl, bu = _bounds_pair(_get(iv, "beta_bounds", path), d, f"{path}.beta_bounds")
    dl, du = _bounds_pair(_get(iv, "delta_bounds", path), d, f"{path}.delta_bounds")
    delta_bar = float(du.max())

    costs = _get(iv, "costs", path, required=False, default="inverse-gap")
    k = d.n * d.m
    if costs == "inverse-gap":
        cost_beta = tuple(inverse_gap_cost(bu[i]) for i in range(k))
        cost_dhat = tuple(inverse_gap_cost(delta_bar + 1.0 - dl[i])
                          for i in range(k))
    elif isinstance(costs, dict):
        cost_beta = _cost_list(_get(costs, "beta", f"{path}.costs"),
                               d, f"{path}.costs.beta")
        cost_dhat = _cost_list(_get(costs, "dhat", f"{path}.costs"),
                               d, f"{path}.costs.dhat")
    else:
        raise SchemaError(f"{path}.costs",
                          "expected 'inverse-gap' or {beta: [...], dhat: [...]}")

    budget = _get(iv, "budget", path, required=False)
    if budget is not None:
        budget = _number(budget, f"{path}.budget", nonnegative=True)
    grid_raw = _get(iv, "budget_grid", path, required=False)
    grid = None
    if grid_raw is not None:
        if not (isinstance(grid_raw, list) and len(grid_raw) == 3):
            raise SchemaError(f"{path}.budget_grid",
                              "expected [start, stop, steps]")
        a = _number(grid_raw[0], f"{path}.budget_grid[0]", nonnegative=True)
        b = _number(grid_raw[1], f"{path}.budget_grid[1]", positive=True)
        steps = _integer(grid_raw[2], f"{path}.budget_grid[2]", positive=True)
        if b <= a:
            raise SchemaError(f"{path}.budget_grid", "stop must exceed start")
        grid = np.linspace(a, b, steps)
    return InterventionSpec(bl, bu, dl, du, cost_beta, cost_dhat,
                            budget, grid)


@dataclass(frozen=True)
class Scenario:
    name: str
    d: MultiLayerDispersal
    rates: EpidemicRates
    simulation: SimulationSettings
    intervention: InterventionSpec
    raw: dict


def parse_scenario(doc):
    if not isinstance(doc, dict):
        raise SchemaError("$", "expected a JSON object")
    name = _get(doc, "name", "$", required=False, default="scenario")
    if not isinstance(name, str):
        raise SchemaError("name", "expected a string")
    d = _build_network(doc)
    rates = _build_rates(doc, d)
    simulation = _build_simulation(doc, d)
    intervention = _build_intervention(doc, d)
    return Scenario(name, d, rates, simulation, intervention, doc)


def load_scenario(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise SchemaError("$", f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from exc
    return parse_scenario(doc)

"""State-dependent couplings and right-hand sides of the coupled
epidemic--dispersal dynamics, in full and sink-reduced coordinates.

Infected fractions p and subpopulations x live on flat layer-major
coordinates: (node i, layer a) sits at index a*n + i.  The per-layer coupling
L(x) redistributes infected fractions so that infected *counts* x_i p_i follow
the dispersal flow; F(x) holds the population share f_i^a = x_i^a / sum_s
x_i^s that layer a contributes at node i, and the node-level infected fraction
seen by a susceptible is p_i^avg = sum_a f_i^a p_i^a.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ZeroPopulation
from .network import detect_sinks

POPULATION_FLOOR_FACTOR = 1e-12


def flat_index(n, node, layer):
    """Layer-major flat coordinate of (node, layer)."""
    return layer * n + node


@dataclass(frozen=True)
class EpidemicRates:
    """Per-coordinate infection rates beta > 0 and recovery rates delta >= 0,
    flat layer-major over (node, layer)."""

    beta: np.ndarray
    delta: np.ndarray
    n: int
    m: int

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        delta = np.asarray(self.delta, dtype=float).reshape(-1)
        if beta.shape != (self.n * self.m,) or delta.shape != (self.n * self.m,):
            raise ValueError("rate vectors must have n*m entries")
        if np.any(beta <= 0):
            raise ValueError("infection rates must be positive")
        if np.any(delta < 0):
            raise ValueError("recovery rates must be nonnegative")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "delta", delta)

    @classmethod
    def uniform(cls, d, beta, delta):
        k = d.n * d.m
        return cls(np.full(k, float(beta)), np.full(k, float(delta)), d.n, d.m)

    @classmethod
    def from_node_values(cls, d, beta, delta):
        """Node-indexed rates replicated across layers (the corrected rates
        beta_i^a, delta_i^a are then equal for all a)."""
        beta = np.asarray(beta, dtype=float).reshape(-1)
        delta = np.asarray(delta, dtype=float).reshape(-1)
        if beta.shape == ():
            beta = np.full(d.n, float(beta))
        if delta.shape == ():
            delta = np.full(d.n, float(delta))
        if beta.shape != (d.n,) or delta.shape != (d.n,):
            raise ValueError("need one beta and one delta per node")
        return cls(np.tile(beta, d.m), np.tile(delta, d.m), d.n, d.m)

    def grids(self):
        """(m, n) views of beta and delta."""
        return self.beta.reshape(self.m, self.n), self.delta.reshape(self.m, self.n)


@dataclass
class SystemState:
    """Infected fractions p, subpopulations x (flat layer-major), and time."""

    p: np.ndarray
    x: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(-1)
        self.x = np.asarray(self.x, dtype=float).reshape(-1)

    def check(self, bound_tol=0.0):
        if np.any(self.p < -bound_tol) or np.any(self.p > 1.0 + bound_tol):
            raise ValueError("infected fractions must lie in [0, 1]")
        if np.any(self.x < 0):
            raise ValueError("subpopulations must be nonnegative")


def population_floor(x):
    """Smallest subpopulation we are willing to divide by."""
    return POPULATION_FLOOR_FACTOR * float(np.mean(x))


@dataclass
class BlockDiagonal:
    """Square block-diagonal matrix stored one layer block at a time."""

    blocks: list

    def dense(self):
        sizes = [b.shape[0] for b in self.blocks]
        out = np.zeros((sum(sizes), sum(sizes)))
        at = 0
        for b in self.blocks:
            k = b.shape[0]
            out[at:at + k, at:at + k] = b
            at += k
        return out

    def matvec(self, v):
        parts = []
        at = 0
        for b in self.blocks:
            k = b.shape[1]
            parts.append(b @ v[at:at + k])
            at += k
        return np.concatenate(parts)


def assemble_L(d, x):
    """Per-layer coupling L^a(x) as a block-diagonal over layers.

    Row i of layer a: diagonal sum_{k != i} q_ki x_k / x_i, off-diagonal
    -q_ji x_j / x_i.  Rows referenced as denominators (nodes with inflow)
    must carry population above the floor; rows with no inflow are zero and
    never divide.  Row sums vanish identically for every positive x.
    """
    xg = np.asarray(x, dtype=float).reshape(d.m, d.n)
    eps = population_floor(xg)
    blocks = []
    for a, layer in enumerate(d.layers):
        q = layer.q
        xa = xg[a]
        inflow = layer.adjacency().any(axis=0)
        low = inflow & (xa < eps)
        if np.any(low):
            node = int(np.flatnonzero(low)[0])
            raise ZeroPopulation(
                f"subpopulation at node {node + 1}, layer {a + 1} is below the "
                f"floor {eps:.3e} but receives dispersal inflow")
        safe = np.where(xa < eps, 1.0, xa)
        m = (q.T * xa[None, :]) / safe[:, None]
        np.fill_diagonal(m, np.diag(q))
        blocks.append(np.diag(m.sum(axis=1)) - m)
    return BlockDiagonal(blocks)


@dataclass
class ClassShares:
    """Population shares f_i^a = x_i^a / sum_s x_i^s on an (m, n) grid.

    The full coupling matrix repeats the block row [F^1 ... F^m] (each F^s a
    diagonal of shares) in every block row, so it is kept as the share grid
    rather than a dense nm x nm array.
    """

    fractions: np.ndarray

    @property
    def m(self):
        return self.fractions.shape[0]

    @property
    def n(self):
        return self.fractions.shape[1]

    def node_average(self, p):
        """p_i^avg = sum_a f_i^a p_i^a for each node."""
        return np.einsum("an,an->n", self.fractions, p.reshape(self.m, self.n))

    def matvec(self, p):
        return np.tile(self.node_average(p), self.m)

    def dense(self):
        row = np.hstack([np.diag(f) for f in self.fractions])
        return np.tile(row, (self.m, 1))


def assemble_F(d, x):
    """Class-share coupling F(x).

    Node totals below the population floor are only tolerated when they are
    exactly zero (an emptied node contributes no shares); a positive total
    below the floor is reported instead of divided by.
    """
    xg = np.asarray(x, dtype=float).reshape(d.m, d.n)
    totals = xg.sum(axis=0)
    eps = population_floor(xg)
    tiny = (totals < eps) & (totals != 0.0)
    if np.any(tiny):
        node = int(np.flatnonzero(tiny)[0])
        raise ZeroPopulation(
            f"total population at node {node} is positive but below the floor {eps:.3e}")
    empty = totals == 0.0
    safe = np.where(empty, 1.0, totals)
    fractions = np.where(empty[None, :], 0.0, xg / safe[None, :])
    return ClassShares(fractions)


def _rhs_arrays(d, r, p, x):
    L = assemble_L(d, x)
    F = assemble_F(d, x)
    pavg = F.node_average(p)
    force = r.beta * np.tile(pavg, d.m)
    dp = (1.0 - p) * force - r.delta * p - L.matvec(p)
    xg = x.reshape(d.m, d.n)
    dx = np.concatenate([layer.q.T @ xg[a] for a, layer in enumerate(d.layers)])
    return dp, dx


def full_rhs(d, r, s):
    """Time derivative (dp, dx) of the full dynamics at state s."""
    return _rhs_arrays(d, r, s.p, s.x)


def make_full_rhs(d, r):
    """RHS callable (t, p, x) -> (dp, dx) for the integrator."""
    def rhs(t, p, x):
        return _rhs_arrays(d, r, p, x)
    return rhs


def make_frozen_profile_rhs(d, r, x):
    """RHS with the dispersal profile pinned at x (dx = 0 identically).

    Useful when x already sits at a stationary profile: the couplings become
    constant and the per-step cost drops to a single matrix-vector product.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    L = assemble_L(d, x).dense()
    fr = assemble_F(d, x).fractions
    beta = r.beta
    delta = r.delta
    m, n = d.m, d.n
    zero = np.zeros_like(x)

    def rhs(t, p, _x):
        pavg = np.einsum("an,an->n", fr, p.reshape(m, n))
        force = beta * np.tile(pavg, m)
        return (1.0 - p) * force - delta * p - L @ p, zero
    return rhs


@dataclass(frozen=True)
class ReducedSystem:
    """Index bookkeeping for the sink-reduced coordinates.

    Bar coordinates run layer-major over each layer's sink nodes; hat
    coordinates do the same over its transient nodes.  `block_positions`
    locates each cross-layer merged block inside the bar ordering.
    """

    structure: object
    bar_pairs: tuple      # ((node, layer), ...) layer-major
    hat_pairs: tuple
    bar_index: np.ndarray  # flat nm coordinates of the bar pairs
    hat_index: np.ndarray
    bar_sizes: tuple       # per layer: number of sink nodes
    hat_sizes: tuple
    bar_beta: np.ndarray
    bar_delta: np.ndarray
    block_positions: tuple

    @property
    def n_bar(self):
        return len(self.bar_pairs)


def build_reduced_system(d, r):
    """Assemble the ReducedSystem for a dispersal whose layers need not be
    strongly connected."""
    structure = detect_sinks(d)
    bar_pairs, hat_pairs = [], []
    bar_sizes, hat_sizes = [], []
    for a in range(d.m):
        sink_nodes = structure.sink_nodes(a)
        bar_pairs.extend((v, a) for v in sink_nodes)
        hat_pairs.extend((v, a) for v in structure.non_sinks[a])
        bar_sizes.append(len(sink_nodes))
        hat_sizes.append(len(structure.non_sinks[a]))
    bar_index = np.array([flat_index(d.n, v, a) for v, a in bar_pairs], dtype=int)
    hat_index = np.array([flat_index(d.n, v, a) for v, a in hat_pairs], dtype=int)
    pos_of = {pair: k for k, pair in enumerate(bar_pairs)}
    block_positions = tuple(
        np.array([pos_of[pair] for pair in blk], dtype=int)
        for blk in structure.merged_blocks)
    return ReducedSystem(
        structure=structure,
        bar_pairs=tuple(bar_pairs),
        hat_pairs=tuple(hat_pairs),
        bar_index=bar_index,
        hat_index=hat_index,
        bar_sizes=tuple(bar_sizes),
        hat_sizes=tuple(hat_sizes),
        bar_beta=r.beta[bar_index],
        bar_delta=r.delta[bar_index],
        block_positions=block_positions,
    )


def _layer_sink_guard(d, rs, xg, a):
    """Population floor for the sink nodes of one layer (bar denominators)."""
    eps = population_floor(xg)
    sink_nodes = rs.structure.sink_nodes(a)
    q = d.layers[a].q
    xa = xg[a]
    for v in sink_nodes:
        inflow = q[:, v].copy()
        inflow[v] = 0.0
        if np.any(inflow > 0) and xa[v] < eps:
            raise ZeroPopulation(
                f"sink node {v + 1}, layer {a + 1} is below the floor {eps:.3e}")


def assemble_L_bar(d, rs, x):
    """Reduced coupling over sink nodes.  Diagonals keep the inflow from every
    node of the full layer (transient inflow included); off-diagonals couple
    sink nodes only."""
    xg = np.asarray(x, dtype=float).reshape(d.m, d.n)
    blocks = []
    for a, layer in enumerate(d.layers):
        _layer_sink_guard(d, rs, xg, a)
        v = rs.structure.sink_nodes(a)
        q = layer.q
        xa = xg[a]
        xv = xa[v]
        inflow = np.array([(q[:, j] * xa).sum() - q[j, j] * xa[j] for j in v])
        off = q[np.ix_(v, v)].T * xv[None, :] / np.where(xv == 0, 1.0, xv)[:, None]
        np.fill_diagonal(off, 0.0)
        blocks.append(np.diag(inflow / np.where(xv == 0, 1.0, xv)) - off)
    return BlockDiagonal(blocks)


def assemble_L_hat(d, rs, x):
    """Transient-to-sink coupling: entry (i, j) of layer a is
    -q_{hat_j, bar_i} xhat_j / xbar_i."""
    xg = np.asarray(x, dtype=float).reshape(d.m, d.n)
    blocks = []
    for a, layer in enumerate(d.layers):
        _layer_sink_guard(d, rs, xg, a)
        v = rs.structure.sink_nodes(a)
        h = list(rs.structure.non_sinks[a])
        xa = xg[a]
        xv = np.where(xa[v] == 0, 1.0, xa[v])
        blocks.append(-(layer.q[np.ix_(h, v)].T * xa[h][None, :]) / xv[:, None])
    return blocks


def _share_entry(xg, totals, layer, node):
    t = totals[node]
    if t == 0.0:
        return 0.0
    return xg[layer, node] / t


def assemble_F_bar(d, rs, x):
    """Share coupling between sink coordinates: rows and columns both run over
    bar pairs; entry is the column pair's share at its node whenever the two
    pairs sit at the same node."""
    xg = np.asarray(x, dtype=float).reshape(d.m, d.n)
    totals = xg.sum(axis=0)
    k = rs.n_bar
    out = np.zeros((k, k))
    for i, (vi, _ai) in enumerate(rs.bar_pairs):
        for j, (vj, aj) in enumerate(rs.bar_pairs):
            if vi == vj:
                out[i, j] = _share_entry(xg, totals, aj, vj)
    return out


def assemble_F_hat(d, rs, x):
    """Share coupling from transient coordinates into sink rows."""
    xg = np.asarray(x, dtype=float).reshape(d.m, d.n)
    totals = xg.sum(axis=0)
    out = np.zeros((rs.n_bar, len(rs.hat_pairs)))
    for i, (vi, _ai) in enumerate(rs.bar_pairs):
        for j, (vj, aj) in enumerate(rs.hat_pairs):
            if vi == vj:
                out[i, j] = _share_entry(xg, totals, aj, vj)
    return out


def reduced_rhs(d, r, rs, s):
    """Time derivative (dp_bar, dx) of the sink-reduced dynamics.

    s.p carries the full flat p; the bar block evolves by the reduced
    equation while transient fractions only enter through the hat couplings,
    whose entries vanish with the transient populations.
    """
    p = s.p
    x = s.x
    pbar = p[rs.bar_index]
    phat = p[rs.hat_index]
    Lb = assemble_L_bar(d, rs, x)
    Lh = assemble_L_hat(d, rs, x)
    Fb = assemble_F_bar(d, rs, x)
    Fh = assemble_F_hat(d, rs, x)
    force = rs.bar_beta * (Fb @ pbar + Fh @ phat)
    hat_flow = np.concatenate([
        blk @ phat[sum(rs.hat_sizes[:a]):sum(rs.hat_sizes[:a + 1])]
        for a, blk in enumerate(Lh)]) if len(phat) else np.zeros(rs.n_bar)
    dp_bar = (1.0 - pbar) * force - rs.bar_delta * pbar - Lb.matvec(pbar) - hat_flow
    xg = x.reshape(d.m, d.n)
    dx = np.concatenate([layer.q.T @ xg[a] for a, layer in enumerate(d.layers)])
    return dp_bar, dx


def make_reduced_rhs(d, r, rs):
    """RHS callable on full-size (p, x) arrays: bar coordinates follow the
    reduced equation, transient fractions are held frozen (their influence
    decays with the transient populations)."""
    def rhs(t, p, x):
        dp_bar, dx = reduced_rhs(d, r, rs, SystemState(p, x, t))
        dp = np.zeros_like(p)
        dp[rs.bar_index] = dp_bar
        return dp, dx
    return rhs

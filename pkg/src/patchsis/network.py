"""Multi-layer patch dispersal: CTMC layer generators, connectivity checks,
stationary distributions, sink detection, and rate synthesis.

Nodes are 0-based internally.  Flat coordinates over (node, layer) pairs are
layer-major throughout the package: coordinate ``layer * n + node``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidTarget, NonIrreducible, SolverFailure

ROW_SUM_TOL = 1e-12
STATIONARY_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class LayerGenerator:
    """Continuous-time Markov generator over the shared patch set.

    Off-diagonal entries q[i, j] are movement rates i -> j; each diagonal
    entry is minus the node's total exit rate, so rows sum to zero.
    """

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("generator must be a square matrix")
        off = q.copy()
        np.fill_diagonal(off, 0.0)
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be nonnegative")
        worst = np.max(np.abs(q.sum(axis=1))) if q.size else 0.0
        if worst > ROW_SUM_TOL:
            raise ValueError(f"generator rows must sum to zero (max |sum| = {worst:.3e})")
        object.__setattr__(self, "q", q)

    @classmethod
    def from_off_diagonal(cls, rates):
        """Build a generator from nonnegative off-diagonal rates; the diagonal
        is filled in so rows sum to zero."""
        rates = np.array(rates, dtype=float)
        np.fill_diagonal(rates, 0.0)
        return cls(rates - np.diag(rates.sum(axis=1)))

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def exit_rates(self):
        """Per-node total exit rate nu_i = sum_{j != i} q_ij."""
        return -np.diag(self.q)

    def adjacency(self):
        """Boolean out-edge matrix induced by positive off-diagonal rates."""
        a = self.q > 0
        np.fill_diagonal(a, False)
        return a


def strongly_connected_components(adj):
    """Strongly connected components of a boolean out-edge matrix.

    Single-pass Tarjan, implemented iteratively so deep graphs cannot hit the
    recursion limit.  Components come back as sorted node lists in reverse
    topological order of the condensation.
    """
    adj = np.asarray(adj, dtype=bool)
    n = adj.shape[0]
    succ = [np.flatnonzero(adj[i]).tolist() for i in range(n)]
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack = []
    comps = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, i = work.pop()
            if i == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            descended = False
            while i < len(succ[v]):
                w = succ[v][i]
                i += 1
                if index[w] == -1:
                    work.append((v, i))
                    work.append((w, 0))
                    descended = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if descended:
                continue
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                comps.append(sorted(comp))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
    return comps


def is_strongly_connected(adj):
    return len(strongly_connected_components(adj)) == 1


def stationary_distribution(g):
    """Stationary distribution pi of an irreducible layer generator.

    Solves the stacked least-squares system [Q^T; 1^T] pi = [0; 1] and checks
    the residual afterwards; for a non-strongly-connected layer call this on
    the sink-restricted generator instead.
    """
    if not is_strongly_connected(g.adjacency()):
        raise NonIrreducible("layer generator is not strongly connected")
    n = g.n
    a = np.vstack([g.q.T, np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = pi / pi.sum()
    residual = np.max(np.abs(g.q.T @ pi))
    if residual > STATIONARY_RESIDUAL_TOL:
        raise SolverFailure(
            f"stationary solve residual {residual:.3e} exceeds {STATIONARY_RESIDUAL_TOL}")
    if np.any(pi <= 0):
        raise SolverFailure("stationary solve returned a non-positive entry")
    return pi


@dataclass(frozen=True)
class SinkStructure:
    """Per-layer sink components plus the cross-layer merged blocks.

    `sinks[a]` lists the closed communicating classes (no outgoing edges in
    the condensation) of layer a, each as a sorted node tuple.  `non_sinks[a]`
    are that layer's transient nodes.  `merged_blocks` partitions all sink
    (node, layer) pairs: sink components from different layers that share a
    node are united transitively.
    """

    sinks: tuple
    non_sinks: tuple
    merged_blocks: tuple

    def sink_nodes(self, layer):
        """Sorted union of the sink node sets of one layer."""
        return sorted(node for comp in self.sinks[layer] for node in comp)


def detect_sinks(d):
    """Sink components of every layer of a MultiLayerDispersal, merged across
    layers wherever they share nodes (union-find with transitive closure)."""
    per_layer = []
    for layer in d.layers:
        adj = layer.adjacency()
        comps = strongly_connected_components(adj)
        comp_of = {}
        for ci, comp in enumerate(comps):
            for v in comp:
                comp_of[v] = ci
        outgoing = [False] * len(comps)
        rows, cols = np.nonzero(adj)
        for u, v in zip(rows, cols):
            if comp_of[u] != comp_of[v]:
                outgoing[comp_of[u]] = True
        sinks = [tuple(comp) for ci, comp in enumerate(comps) if not outgoing[ci]]
        sinks.sort()
        per_layer.append(tuple(sinks))

    # union-find over (layer, component) keys; join components sharing a node
    keys = [(a, ci) for a, sinks in enumerate(per_layer) for ci in range(len(sinks))]
    parent = {k: k for k in keys}

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    def union(k1, k2):
        r1, r2 = find(k1), find(k2)
        if r1 != r2:
            parent[r2] = r1

    by_node = {}
    for a, sinks in enumerate(per_layer):
        for ci, comp in enumerate(sinks):
            for v in comp:
                by_node.setdefault(v, []).append((a, ci))
    for members in by_node.values():
        for other in members[1:]:
            union(members[0], other)

    groups = {}
    for k in keys:
        groups.setdefault(find(k), []).append(k)
    blocks = []
    for members in groups.values():
        pairs = sorted(
            (node, a) for a, ci in members for node in per_layer[a][ci])
        pairs.sort(key=lambda t: (t[1], t[0]))  # layer-major
        blocks.append(tuple(pairs))
    blocks.sort(key=lambda blk: (blk[0][1], blk[0][0]))

    non_sinks = []
    for a, sinks in enumerate(per_layer):
        in_sink = {v for comp in sinks for v in comp}
        non_sinks.append(tuple(v for v in range(d.n) if v not in in_sink))
    return SinkStructure(tuple(per_layer), tuple(non_sinks), tuple(blocks))


def construct_metropolis_rates(adjacency, target, total_rate):
    """Generator over a symmetric adjacency whose stationary distribution is
    `target`, scaled so the largest per-node exit rate equals `total_rate`.

    Proposal is uniform over out-neighbours; acceptance of i -> j is
    min(1, target_j deg_i / (target_i deg_j)).  Uniform rescaling of the whole
    matrix leaves the stationary distribution unchanged.
    """
    adjacency = np.array(adjacency, dtype=bool)
    np.fill_diagonal(adjacency, False)
    target = np.asarray(target, dtype=float)
    if target.shape != (adjacency.shape[0],) or np.any(target <= 0):
        raise InvalidTarget("target must be strictly positive with one entry per node")
    if not np.array_equal(adjacency, adjacency.T):
        raise ValueError("Metropolis construction needs a symmetric adjacency "
                         "(reversibility requires two-way proposal support)")
    if not is_strongly_connected(adjacency):
        raise NonIrreducible("adjacency is not strongly connected")
    if total_rate <= 0:
        raise ValueError("total_rate must be positive")
    t = target / target.sum()
    deg = adjacency.sum(axis=1).astype(float)
    ratio = np.minimum(1.0, (t[None, :] * deg[:, None]) / (t[:, None] * deg[None, :]))
    raw = np.where(adjacency, ratio / deg[:, None], 0.0)
    scale = total_rate / raw.sum(axis=1).max()
    g = LayerGenerator.from_off_diagonal(raw * scale)
    residual = np.max(np.abs(g.q.T @ t))
    if residual > STATIONARY_RESIDUAL_TOL:
        raise SolverFailure(
            f"Metropolis rates miss the target (residual {residual:.3e})")
    return g


def equal_split_rates(adjacency, total_rate):
    """Generator that leaves every node at rate `total_rate`, split equally
    among its out-neighbours.  Nodes without out-edges become absorbing."""
    adjacency = np.array(adjacency, dtype=bool)
    np.fill_diagonal(adjacency, False)
    if total_rate < 0:
        raise ValueError("total_rate must be nonnegative")
    deg = adjacency.sum(axis=1).astype(float)
    safe = np.where(deg > 0, deg, 1.0)
    raw = np.where(adjacency, total_rate / safe[:, None], 0.0)
    return LayerGenerator.from_off_diagonal(raw)


def topology_adjacency(name, n):
    """Symmetric adjacency for the named patch topologies.

    line:     i <-> i+1 along 0..n-1
    ring:     the line plus n-1 <-> 0
    star:     node 0 <-> every other node
    complete: every pair
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    a = np.zeros((n, n), dtype=bool)
    if name == "complete":
        a[:] = True
    elif name == "line":
        idx = np.arange(n - 1)
        a[idx, idx + 1] = a[idx + 1, idx] = True
    elif name == "ring":
        a = topology_adjacency("line", n)
        if n > 1:
            a[0, n - 1] = a[n - 1, 0] = True
    elif name == "star":
        a[0, 1:] = a[1:, 0] = True
    else:
        raise ValueError(f"unknown topology {name!r}")
    np.fill_diagonal(a, False)
    return a


@dataclass(frozen=True)
class MultiLayerDispersal:
    """A stack of layer generators over one shared patch set, with the total
    population N^a carried by each layer."""

    layers: tuple
    populations: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        pops = tuple(float(v) for v in self.populations)
        if not layers:
            raise ValueError("need at least one layer")
        n = layers[0].n
        if any(g.n != n for g in layers):
            raise ValueError("all layers must share the same node count")
        if len(pops) != len(layers):
            raise ValueError("one population per layer")
        if any(v <= 0 for v in pops):
            raise ValueError("layer populations must be positive")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "populations", pops)

    @property
    def m(self):
        return len(self.layers)

    @property
    def n(self):
        return self.layers[0].n

    def stationary_profile(self):
        """Population-scaled stationary profile, flat layer-major:
        entry (node i, layer a) is N^a pi^a_i.  Layers must be irreducible."""
        parts = [N * stationary_distribution(g)
                 for g, N in zip(self.layers, self.populations)]
        return np.concatenate(parts)


def validate_strong_connectivity(d):
    """Per-layer strong connectivity flags."""
    return [is_strongly_connected(g.adjacency()) for g in d.layers]


def absorbed_profile(d, x0):
    """Long-run population profile lim exp(Q^T t) x0, flat layer-major.

    Transient mass reaches each sink with its absorption probability and
    settles at the sink's own stationary distribution; transient nodes end at
    zero.  Reduces to N^a pi^a when every layer is irreducible.
    """
    x0 = np.asarray(x0, dtype=float).reshape(d.m, d.n)
    if np.any(x0 < 0):
        raise ValueError("populations must be nonnegative")
    structure = detect_sinks(d)
    out = np.zeros((d.m, d.n))
    for a, layer in enumerate(d.layers):
        q = layer.q
        trans = list(structure.non_sinks[a])
        hit = None
        if trans:
            block = -q[np.ix_(trans, trans)]
            hit = np.linalg.solve(block, np.eye(len(trans)))
        for comp in structure.sinks[a]:
            comp = list(comp)
            mass = x0[a, comp].sum()
            if trans:
                into = q[np.ix_(trans, comp)].sum(axis=1)
                mass += x0[a, trans] @ (hit @ into)
            sub = LayerGenerator(q[np.ix_(comp, comp)])
            out[a, comp] = mass * stationary_distribution(sub)
    return out.reshape(-1)

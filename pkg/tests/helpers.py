"""Shared builders for randomized test instances.

Everything takes an explicit numpy Generator so each test controls its own
seed and stays reproducible.
"""

import numpy as np

from patchsis import EpidemicRates, LayerGenerator, MultiLayerDispersal


def random_generator(rng, n, extra_edge_prob=0.3, lo=0.05, hi=0.5):
    """Random strongly connected layer generator: a random cycle through all
    nodes guarantees connectivity, then extra edges are sprinkled on top."""
    rates = np.zeros((n, n))
    if n == 1:
        return LayerGenerator(np.zeros((1, 1)))
    order = rng.permutation(n)
    for k in range(n):
        i, j = order[k], order[(k + 1) % n]
        rates[i, j] = rng.uniform(lo, hi)
    mask = rng.random((n, n)) < extra_edge_prob
    np.fill_diagonal(mask, False)
    extra = rng.uniform(lo, hi, (n, n))
    rates = np.where(mask & (rates == 0), extra, rates)
    return LayerGenerator.from_off_diagonal(rates)


def random_dispersal(rng, n=None, m=None, max_n=10, max_m=3):
    """Random strongly connected multi-layer dispersal network."""
    if n is None:
        n = int(rng.integers(2, max_n + 1))
    if m is None:
        m = int(rng.integers(1, max_m + 1))
    layers = tuple(random_generator(rng, n) for _ in range(m))
    pops = tuple(float(rng.uniform(50.0, 500.0)) for _ in range(m))
    return MultiLayerDispersal(layers, pops)


def random_rates(rng, d, beta_range=(0.05, 0.45), delta_range=(0.05, 0.45)):
    k = d.n * d.m
    beta = rng.uniform(*beta_range, k)
    delta = rng.uniform(*delta_range, k)
    return EpidemicRates(beta, delta, d.n, d.m)


def sinky_generator(rng, n, sink_nodes, lo=0.1, hi=0.5):
    """Layer whose only sink component is exactly `sink_nodes`: the sink is a
    cycle among its nodes, every non-sink node chains toward the sink."""
    sink = list(sink_nodes)
    rest = [v for v in range(n) if v not in sink]
    rates = np.zeros((n, n))
    if len(sink) == 1:
        pass  # absorbing single node
    else:
        for k in range(len(sink)):
            rates[sink[k], sink[(k + 1) % len(sink)]] = rng.uniform(lo, hi)
    chain = rest + [sink[0]]
    for k in range(len(rest)):
        rates[chain[k], chain[k + 1]] = rng.uniform(lo, hi)
    return LayerGenerator.from_off_diagonal(rates)


def scenario_path(name):
    from pathlib import Path
    import patchsis
    return Path(patchsis.__file__).parent / "scenarios" / f"{name}.json"

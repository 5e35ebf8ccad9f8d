"""Operator assembly and right-hand sides, checked against hand-rolled
componentwise oracles."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from helpers import random_dispersal, random_rates, sinky_generator

from patchsis import (EpidemicRates, LayerGenerator, MultiLayerDispersal,
                      SystemState, ZeroPopulation, assemble_F, assemble_L,
                      build_reduced_system, flat_index, full_rhs,
                      make_frozen_profile_rhs, make_full_rhs,
                      make_reduced_rhs, reduced_rhs, stationary_distribution)
from patchsis.model import BlockDiagonal


def coupling_oracle(d, x):
    """L(x) straight from its definition, one entry at a time."""
    xg = np.asarray(x).reshape(d.m, d.n)
    out = np.zeros((d.m, d.n, d.n))
    for a, layer in enumerate(d.layers):
        q = layer.q
        for i in range(d.n):
            for j in range(d.n):
                if i == j:
                    out[a, i, i] = sum(q[k, i] * xg[a, k]
                                       for k in range(d.n) if k != i) / xg[a, i]
                else:
                    out[a, i, j] = -q[j, i] * xg[a, j] / xg[a, i]
    return out


def rhs_oracle(d, r, p, x):
    """Componentwise infection dynamics: for each node i and layer a,
    dp = -delta p + beta p_avg (1 - p) - sum_j L[i,j] p_j."""
    xg = np.asarray(x).reshape(d.m, d.n)
    pg = np.asarray(p).reshape(d.m, d.n)
    bg, dg = r.grids()
    lmat = coupling_oracle(d, x)
    totals = xg.sum(axis=0)
    dp = np.zeros((d.m, d.n))
    for a in range(d.m):
        for i in range(d.n):
            pavg = sum(xg[s, i] / totals[i] * pg[s, i] for s in range(d.m))
            dp[a, i] = (-dg[a, i] * pg[a, i]
                        + bg[a, i] * pavg * (1.0 - pg[a, i])
                        - sum(lmat[a, i, j] * pg[a, j] for j in range(d.n)))
    dx = np.concatenate([d.layers[a].q.T @ xg[a] for a in range(d.m)])
    return dp.reshape(-1), dx


def test_flat_index_is_layer_major():
    assert flat_index(5, node=0, layer=0) == 0
    assert flat_index(5, node=4, layer=0) == 4
    assert flat_index(5, node=0, layer=1) == 5
    assert flat_index(5, node=2, layer=3) == 17


def test_rates_validation():
    with pytest.raises(ValueError):
        EpidemicRates(np.array([0.0, 0.1]), np.array([0.1, 0.1]), 2, 1)
    with pytest.raises(ValueError):
        EpidemicRates(np.array([0.1, 0.1]), np.array([-0.1, 0.1]), 2, 1)
    with pytest.raises(ValueError):
        EpidemicRates(np.ones(3), np.ones(3), 2, 2)  # wrong length
    r = EpidemicRates(np.full(4, 0.3), np.full(4, 0.2), 2, 2)
    bg, dg = r.grids()
    assert bg.shape == (2, 2) and dg.shape == (2, 2)


def test_rates_from_node_values_tiles_layers():
    rng = np.random.default_rng(5)
    d = random_dispersal(rng, n=4, m=3)
    r = EpidemicRates.from_node_values(d, np.array([0.1, 0.2, 0.3, 0.4]),
                                       np.array([0.5, 0.6, 0.7, 0.8]))
    bg, dg = r.grids()
    for a in range(3):
        assert_allclose(bg[a], [0.1, 0.2, 0.3, 0.4])
        assert_allclose(dg[a], [0.5, 0.6, 0.7, 0.8])


def test_coupling_matches_componentwise_definition():
    rng = np.random.default_rng(101)
    for _ in range(20):
        d = random_dispersal(rng)
        x = rng.uniform(0.3, 3.0, d.n * d.m)
        dense = assemble_L(d, x).dense()
        oracle = coupling_oracle(d, x)
        for a in range(d.m):
            block = dense[a * d.n:(a + 1) * d.n, a * d.n:(a + 1) * d.n]
            assert_allclose(block, oracle[a], atol=1e-12)
        # off-block entries are zero: layers do not mix in L
        mask = np.ones_like(dense, dtype=bool)
        for a in range(d.m):
            mask[a * d.n:(a + 1) * d.n, a * d.n:(a + 1) * d.n] = False
        assert np.all(dense[mask] == 0)


def test_coupling_annihilates_ones_at_any_state():
    # L(x) 1 = 0 identically, not only at the stationary profile
    rng = np.random.default_rng(17)
    for _ in range(25):
        d = random_dispersal(rng)
        x = rng.uniform(0.05, 5.0, d.n * d.m)
        dense = assemble_L(d, x).dense()
        assert np.abs(dense @ np.ones(d.n * d.m)).max() < 1e-10


def test_coupling_diagonal_is_exit_rate_at_stationarity():
    rng = np.random.default_rng(23)
    d = random_dispersal(rng, n=6, m=2)
    x = d.stationary_profile()
    dense = assemble_L(d, x).dense()
    expected = np.concatenate([g.exit_rates for g in d.layers])
    assert_allclose(np.diag(dense), expected, atol=1e-9)


def test_coupling_zero_population_guard():
    g = LayerGenerator(np.array([[-0.2, 0.2], [0.1, -0.1]]))
    d = MultiLayerDispersal((g,), (10.0,))
    with pytest.raises(ZeroPopulation) as err:
        assemble_L(d, np.array([10.0, 0.0]))
    assert "node 2" in str(err.value)


def test_shares_are_population_fractions():
    rng = np.random.default_rng(31)
    d = random_dispersal(rng, n=4, m=3)
    x = rng.uniform(0.2, 2.0, 12)
    f = assemble_F(d, x)
    xg = x.reshape(3, 4)
    assert_allclose(f.fractions, xg / xg.sum(axis=0, keepdims=True),
                    atol=1e-14)
    assert_allclose(f.fractions.sum(axis=0), 1.0, atol=1e-12)
    # matvec tiles the node average across layers
    p = rng.uniform(0, 1, 12)
    avg = f.node_average(p)
    assert_allclose(f.matvec(p), np.tile(avg, 3), atol=1e-14)
    # dense rows sum to one and the matvec agrees with the dense action
    dense = f.dense()
    assert_allclose(dense.sum(axis=1), 1.0, atol=1e-12)
    assert_allclose(dense @ p, f.matvec(p), atol=1e-13)


def test_shares_empty_node_is_all_zero():
    g = LayerGenerator(np.array([[-0.2, 0.2], [0.1, -0.1]]))
    d = MultiLayerDispersal((g, g), (10.0, 10.0))
    x = np.array([1.0, 0.0, 2.0, 0.0])  # node 2 empty in both layers
    f = assemble_F(d, x)
    assert f.fractions[0, 1] == 0.0 and f.fractions[1, 1] == 0.0


def test_block_diagonal_dense_matches_matvec():
    rng = np.random.default_rng(41)
    blocks = [rng.normal(size=(3, 3)), rng.normal(size=(2, 2))]
    bd = BlockDiagonal(blocks)
    v = rng.normal(size=5)
    assert_allclose(bd.dense() @ v, bd.matvec(v), atol=1e-13)
    assert bd.dense().shape == (5, 5)


def test_full_rhs_matches_componentwise_oracle():
    rng = np.random.default_rng(57)
    for _ in range(20):
        d = random_dispersal(rng)
        r = random_rates(rng, d)
        p = rng.uniform(0, 1, d.n * d.m)
        x = rng.uniform(0.3, 3.0, d.n * d.m)
        dp, dx = full_rhs(d, r, SystemState(p, x))
        dp_o, dx_o = rhs_oracle(d, r, p, x)
        assert_allclose(dp, dp_o, atol=1e-11)
        assert_allclose(dx, dx_o, atol=1e-12)
        # the closure form agrees with the one-shot form
        rhs = make_full_rhs(d, r)
        dp2, dx2 = rhs(0.0, p, x)
        assert_allclose(dp2, dp, atol=1e-14)
        assert_allclose(dx2, dx, atol=1e-14)


def test_frozen_profile_rhs_matches_full_at_stationarity():
    rng = np.random.default_rng(63)
    d = random_dispersal(rng, n=5, m=2)
    r = random_rates(rng, d)
    x = d.stationary_profile()
    p = rng.uniform(0, 1, 10)
    dp_full, _ = full_rhs(d, r, SystemState(p, x))
    frozen = make_frozen_profile_rhs(d, r, x)
    dp_frozen, dx_frozen = frozen(0.0, p, x)
    assert_allclose(dp_frozen, dp_full, atol=1e-12)
    assert_allclose(dx_frozen, 0.0)


def test_reduced_system_bookkeeping():
    rng = np.random.default_rng(71)
    g1 = sinky_generator(rng, 4, [1, 2])
    g2 = sinky_generator(rng, 4, [0, 1])
    d = MultiLayerDispersal((g1, g2), (60.0, 80.0))
    r = random_rates(rng, d)
    rs = build_reduced_system(d, r)
    assert rs.bar_pairs == ((1, 0), (2, 0), (0, 1), (1, 1))
    assert rs.hat_pairs == ((0, 0), (3, 0), (2, 1), (3, 1))
    assert rs.bar_sizes == (2, 2) and rs.hat_sizes == (2, 2)
    assert_allclose(rs.bar_beta, r.beta[list(rs.bar_index)])
    # flat indices round-trip through the layer-major convention
    for k, (v, a) in enumerate(rs.bar_pairs):
        assert rs.bar_index[k] == a * 4 + v


def test_reduced_rhs_equals_full_restriction():
    # row by row, the reduced equation coincides with the full equation on
    # the sink coordinates at any positive state (each coupling or share
    # term lands in exactly one of the bar/hat pieces)
    rng = np.random.default_rng(83)
    for _ in range(10):
        n = int(rng.integers(3, 6))
        sink1 = sorted(rng.choice(n, size=2, replace=False).tolist())
        sink2 = sorted(rng.choice(n, size=2, replace=False).tolist())
        d = MultiLayerDispersal(
            (sinky_generator(rng, n, sink1), sinky_generator(rng, n, sink2)),
            (50.0, 70.0))
        r = random_rates(rng, d)
        rs = build_reduced_system(d, r)
        x = rng.uniform(0.5, 2.0, 2 * n)
        p = rng.uniform(0, 1, 2 * n)
        dp_bar, _ = reduced_rhs(d, r, rs, SystemState(p, x))
        dp_full, _ = full_rhs(d, r, SystemState(p, x))
        assert_allclose(dp_bar, dp_full[rs.bar_index], atol=1e-10)


def test_reduced_rhs_closure_freezes_transients():
    rng = np.random.default_rng(97)
    g1 = sinky_generator(rng, 4, [1, 2])
    g2 = sinky_generator(rng, 4, [0, 1])
    d = MultiLayerDispersal((g1, g2), (60.0, 80.0))
    r = random_rates(rng, d)
    rs = build_reduced_system(d, r)
    rhs = make_reduced_rhs(d, r, rs)
    p = rng.uniform(0, 1, 8)
    x = rng.uniform(0.5, 2.0, 8)
    dp, dx = rhs(0.0, p, x)
    assert np.all(dp[rs.hat_index] == 0.0)
    assert dp[rs.bar_index].shape == (4,)
    assert_allclose(dx, np.concatenate(
        [g.q.T @ x.reshape(2, 4)[a] for a, g in enumerate(d.layers)]),
        atol=1e-12)

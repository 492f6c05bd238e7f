import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from perfgat import numcore as nc
from perfgat.errors import ContractError, EmptyGraphError, StructuralCollapseError
from perfgat.structlearn import (
    GslConfig,
    GslLayerParams,
    attention_matrix,
    edge_attention,
    forward_fixed,
    gsl_layer,
    init_layer,
    n_pairs,
    negative_graph,
    run_structure_learning,
    select_edges,
    select_pairs,
    update_node_features,
)

from oracles import attention_loops, gsl_layer_loops, random_graph

PATH3 = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)


def layer(rng, d_in, d_out):
    return GslLayerParams(**init_layer(rng, d_in, d_out))


def test_negative_graph_examples():
    full = 1 - np.eye(4)
    np.testing.assert_array_equal(negative_graph(full), np.zeros((4, 4)))
    np.testing.assert_array_equal(negative_graph(np.zeros((4, 4))), full)
    with pytest.raises(ContractError):
        negative_graph(np.array([[0, 1], [0, 0]]))


@given(st.integers(0, 10_000), st.integers(2, 9))
def test_negative_graph_involution(seed, n):
    a = random_graph(np.random.default_rng(seed), n)
    np.testing.assert_array_equal(negative_graph(negative_graph(a)), a)


def test_attention_hand_computation_on_path():
    p = GslLayerParams(W_A=np.array([[1.0]]), w_a=np.array([1.0, -1.0]), W_n=np.array([[2.0]]))
    x = np.array([[1.0], [2.0], [3.0]])
    s = edge_attention(x, PATH3, p).as_dict()
    # node 1: raw scores lrelu(2-1)=1 and lrelu(2-3)=-0.2
    assert s[(1, 0)] == pytest.approx(1 / (1 + math.exp(-1.2)), abs=1e-15)
    assert s[(1, 2)] == pytest.approx(1 - 1 / (1 + math.exp(-1.2)), abs=1e-15)
    assert s[(0, 1)] == 1.0 and s[(2, 1)] == 1.0
    h = update_node_features(x, edge_attention(x, PATH3, p), p.W_n).data
    e10 = 1 / (1 + math.exp(-1.2))
    np.testing.assert_allclose(h[:, 0], [4.0, 2 * (e10 * 1 + (1 - e10) * 3), 4.0], atol=1e-14)


def test_attention_uniform_for_identical_features(rng):
    a = random_graph(rng, 6, 0.6)
    a[0, 1] = a[1, 0] = 1
    x = np.ones((6, 3))
    e = attention_matrix(x, a, layer(rng, 3, 4)).data
    deg = a.sum(axis=1)
    for i in range(6):
        if deg[i]:
            np.testing.assert_allclose(e[i][a[i] > 0], 1 / deg[i], atol=1e-15)


def test_attention_matches_loop_oracle(rng):
    for _ in range(10):
        a = random_graph(rng, 7)
        x = rng.normal(size=(7, 5))
        p = layer(rng, 5, 3)
        np.testing.assert_allclose(attention_matrix(x, a, p).data,
                                   attention_loops(x, a, p.W_A, p.w_a), atol=1e-14)


def test_edge_attention_errors_and_isolated_nodes(rng):
    p = layer(rng, 2, 2)
    with pytest.raises(EmptyGraphError):
        edge_attention(np.ones((3, 2)), np.zeros((3, 3)), p)
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = 1
    s = edge_attention(rng.normal(size=(3, 2)), a, p)
    assert s.edges == [(0, 1), (1, 0)]
    np.testing.assert_array_equal(s.matrix.data[2], 0.0)


def test_select_edges_examples():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = a[0, 2] = a[2, 0] = 1
    e = np.zeros((3, 3))
    e[0, 1] = e[1, 0] = 0.9
    e[0, 2] = e[2, 0] = 0.1
    assert select_pairs(e, a, 1, "lowest").pairs == [(0, 2)]
    assert select_pairs(e, a, 1, "highest").pairs == [(0, 1)]
    assert select_pairs(e, a, 0, "lowest").pairs == []
    assert select_pairs(np.full((3, 3), 0.5), a, 1, "lowest").pairs == [(0, 1)]
    sel = select_pairs(e, a, 5, "lowest")
    assert sel.clipped and len(sel.pairs) == 2
    with pytest.raises(ContractError):
        select_pairs(e, a, 1, "middle")


def test_select_edges_uses_symmetrized_scores(rng):
    p = layer(rng, 3, 3)
    a = random_graph(rng, 6, 0.7)
    s = edge_attention(rng.normal(size=(6, 3)), a, p)
    sym = {(i, j): (s.matrix.data[i, j] + s.matrix.data[j, i]) / 2
           for i, j in s.edges if i < j}
    lowest = min(sym, key=lambda k: (sym[k], k))
    assert select_edges(s, 1, "lowest").pairs == [lowest]


def test_update_node_features_identity_cases():
    x = np.array([[1.0, 0.0], [0.0, 2.0], [4.0, 4.0]])
    e = np.zeros((3, 3))
    e[0, 1] = 1.0
    np.testing.assert_array_equal(update_node_features(x, e, np.eye(2)).data[0], x[1])
    e = PATH3 / PATH3.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(update_node_features(x, e, np.eye(2)).data[1], (x[0] + x[2]) / 2)


@pytest.mark.parametrize("seed", range(40))
def test_gsl_layer_matches_brute_force_oracle(seed):
    r = np.random.default_rng(seed)
    a = random_graph(r, 5, 0.5)
    while n_pairs(a) < 3 or n_pairs(a) > 7:
        a = random_graph(r, 5, 0.5)
    x = r.normal(size=(5, 4))
    p = layer(r, 4, 3)
    alpha, beta = int(r.integers(0, 3)), int(r.integers(0, 3))
    h, a_new, recs = gsl_layer(x, a, p, alpha, beta)
    h_ref, a_ref, drop, add = gsl_layer_loops(x, a, p.W_A, p.w_a, p.W_n, alpha, beta)
    np.testing.assert_array_equal(a_new, a_ref)
    if alpha or beta:
        assert recs[0].deleted == drop and recs[0].added == add
    np.testing.assert_allclose(h.data, h_ref, atol=1e-12)


def test_counting_invariant_example(rng):
    # 10 pairs, alpha=2, beta=3: 11 after the first layer, 12 after the second
    a = np.zeros((7, 7))
    pairs = [(i, j) for i in range(7) for j in range(i + 1, 7)][:10]
    for i, j in pairs:
        a[i, j] = a[j, i] = 1
    params = [layer(rng, 4, 5), layer(rng, 5, 5)]
    res = run_structure_learning((rng.normal(size=(7, 4)), a), params, GslConfig(2, 3, 2, 5))
    assert [r.pairs_after for r in res.history] == [11, 12]
    assert res.z.shape == (7, 5)


def test_no_edit_reduces_to_stacked_attention(rng):
    a = random_graph(rng, 6, 0.6)
    a[0, 1] = a[1, 0] = 1
    x = rng.normal(size=(6, 3))
    params = [layer(rng, 3, 4), layer(rng, 4, 4)]
    res = run_structure_learning((x, a), params, GslConfig(0, 0, 2, 4))
    np.testing.assert_array_equal(res.adjacency, a)
    np.testing.assert_allclose(res.z.data, forward_fixed(x, [a, a], params).data, atol=0)


def test_collapse_raises(rng):
    a = np.zeros((4, 4))
    a[0, 1] = a[1, 0] = 1
    with pytest.raises(StructuralCollapseError):
        gsl_layer(rng.normal(size=(4, 2)), a, layer(rng, 2, 2), 1, 0)


def test_clipping_flagged(rng):
    a = 1 - np.eye(4)
    a[0, 1] = a[1, 0] = 0
    _, a_new, recs = gsl_layer(rng.normal(size=(4, 2)), a, layer(rng, 2, 2), 1, 3)
    assert recs[0].clipped and recs[0].added == [(0, 1)]
    assert n_pairs(a_new) == 5


def test_batched_layer_equals_per_sample(rng):
    xs = rng.normal(size=(3, 6, 4))
    adjs = np.stack([random_graph(rng, 6, 0.6) for _ in range(3)])
    adjs[:, 0, 1] = adjs[:, 1, 0] = 1
    adjs[:, 2, 3] = adjs[:, 3, 2] = 1
    adjs[:, 4, 5] = adjs[:, 5, 4] = 1
    p = layer(rng, 4, 3)
    hb, ab, _ = gsl_layer(xs, adjs, p, 1, 1)
    for b in range(3):
        h, a, _ = gsl_layer(xs[b], adjs[b], p, 1, 1)
        np.testing.assert_array_equal(ab[b], a)
        np.testing.assert_allclose(hb.data[b], h.data, atol=1e-14)


def test_gradients_with_frozen_edits(rng):
    a = random_graph(rng, 6, 0.5)
    a[0, 1] = a[1, 0] = a[2, 3] = a[3, 2] = a[4, 5] = a[5, 4] = 1
    x = rng.normal(size=(6, 4))
    init = {f"{i}.{k}": v for i, (di, do) in enumerate([(4, 5), (5, 3)])
            for k, v in init_layer(rng, di, do).items()}
    cfg = GslConfig(1, 1, 2, 5)
    names = lambda i: {k: init[f"{i}.{k}"] for k in ("W_A", "w_a", "W_n")}
    adjs = run_structure_learning((x, a), [names(0), names(1)], cfg).layer_adjacencies
    w = rng.normal(size=(6, 3))

    def f(p):
        layers = [{k: p[f"{i}.{k}"] for k in ("W_A", "w_a", "W_n")} for i in range(2)]
        return nc.tsum(forward_fixed(x, adjs, layers) * w)

    assert nc.finite_diff_check(f, init) <= 1e-4

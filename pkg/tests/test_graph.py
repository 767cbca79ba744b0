import numpy as np
import pytest
from hypothesis import given, strategies as st

from bundlenet.errors import ContractError, LoadError
from bundlenet.graph import (
    RELATIONS,
    build_block_adjacency,
    build_graph,
    build_relational_adjacency,
    delete_edges,
)
from bundlenet.model import ModelConfig, forward_propagate, init_params

from conftest import random_graph


def test_empty_graph():
    g = build_graph([], [], [], (2, 3, 1))
    assert g.n_nodes == 6
    for kind in ("ub", "ui", "bi"):
        assert g.edges(kind).shape == (0, 2)
    a = build_block_adjacency(g).a_hat.todense()
    assert np.array_equal(a, np.eye(6))
    rel = build_relational_adjacency(g)
    assert all(rel[r].nnz == 0 for r in RELATIONS)


def test_fig3_counts_round_trip(fig3_graph):
    g = fig3_graph
    assert (g.n_users, g.n_items, g.n_bundles) == (3, 4, 3)
    assert g.edges_ub.shape[0] == 4 and g.edges_ui.shape[0] == 5 and g.edges_bi.shape[0] == 6
    again = build_graph(g.edges_ub, g.edges_ui, g.edges_bi, (3, 4, 3))
    for kind in ("ub", "ui", "bi"):
        assert np.array_equal(again.edges(kind), g.edges(kind))
    assert list(g.neighbors("ub", 0)) == [0, 1]


def test_duplicates_collapse():
    g = build_graph([(0, 0), (0, 0)], [], [], (1, 1, 1))
    assert g.edges_ub.tolist() == [[0, 0]]


def test_out_of_range_rejected():
    with pytest.raises(LoadError):
        build_graph([(0, 5)], [], [], (1, 1, 1))
    with pytest.raises(LoadError):
        build_graph([], [(-1, 0)], [], (1, 1, 1))


def test_single_edge_block_is_half():
    g = build_graph([(0, 0)], [], [], (1, 0, 1))
    a = build_block_adjacency(g).a_hat.todense()
    assert np.array_equal(a, np.full((2, 2), 0.5))


@given(st.integers(0, 2**32 - 1))
def test_block_adjacency_properties(seed):
    g = random_graph(np.random.default_rng(seed))
    a = build_block_adjacency(g).a_hat.todense()
    assert np.array_equal(a, a.T)
    nz = a[a != 0]
    assert np.all((nz > 0) & (nz <= 1))
    # direct formula on the dense block matrix
    n, off = g.n_nodes, g.offsets
    dense = np.zeros((n, n))
    for kind, (left, right) in (("ub", ("user", "bundle")), ("ui", ("user", "item")), ("bi", ("bundle", "item"))):
        for x, y in g.edges(kind):
            dense[off[left] + x, off[right] + y] = dense[off[right] + y, off[left] + x] = 1.0
    assert np.all(np.diag(dense) == 0)
    tilde = dense + np.eye(n)
    d = 1.0 / np.sqrt(tilde.sum(1))
    np.testing.assert_allclose(a, d[:, None] * tilde * d[None, :], rtol=0, atol=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_block_adjacency_permutation(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng)
    pu, pi, pb = rng.permutation(g.n_users), rng.permutation(g.n_items), rng.permutation(g.n_bundles)
    h = build_graph(np.stack([pu[g.edges_ub[:, 0]], pb[g.edges_ub[:, 1]]], 1).reshape(-1, 2),
                    np.stack([pu[g.edges_ui[:, 0]], pi[g.edges_ui[:, 1]]], 1).reshape(-1, 2),
                    np.stack([pb[g.edges_bi[:, 0]], pi[g.edges_bi[:, 1]]], 1).reshape(-1, 2),
                    (g.n_users, g.n_items, g.n_bundles))
    perm = np.concatenate([pu, g.n_users + pi, g.n_users + g.n_items + pb])
    a, b = build_block_adjacency(g).a_hat.todense(), build_block_adjacency(h).a_hat.todense()
    p = np.zeros((g.n_nodes, g.n_nodes))
    p[perm, np.arange(g.n_nodes)] = 1.0
    np.testing.assert_array_equal(b, p @ a @ p.T)


@given(st.integers(0, 2**32 - 1))
def test_relational_rows_and_transposes(seed):
    g = random_graph(np.random.default_rng(seed))
    rel = build_relational_adjacency(g)
    for name in RELATIONS:
        m = rel[name].todense()
        sums = m.sum(1)
        nonzero = (m != 0).any(1)
        np.testing.assert_allclose(sums[nonzero], 1.0, atol=1e-12)
        assert np.all(sums[~nonzero] == 0)
    for fwd, back in (("user_item", "item_user"), ("user_bundle", "bundle_user"), ("bundle_item", "item_bundle")):
        assert np.array_equal(rel[fwd].todense() != 0, (rel[back].todense() != 0).T)


def test_relational_two_neighbors(fig3_graph):
    rel = build_relational_adjacency(fig3_graph)
    off = fig3_graph.offsets
    row = rel["user_bundle"].todense()[off["user"] + 0]
    assert sorted(row[row != 0].tolist()) == [0.5, 0.5]
    assert row[off["bundle"] + 0] == 0.5 and row[off["bundle"] + 1] == 0.5


def test_delete_recomputes_normalization(fig3_graph):
    view = delete_edges(fig3_graph, {"ub": [(0, 0)]})
    off = fig3_graph.offsets
    row = view.adjacency["user_bundle"].todense()[off["user"] + 0]
    assert row[off["bundle"] + 1] == 1.0 and row[off["bundle"] + 0] == 0.0
    back = view.adjacency["bundle_user"].todense()[off["bundle"] + 0]
    assert not back.any()
    # base untouched
    assert fig3_graph.edges_ub.shape[0] == 4
    row = build_relational_adjacency(fig3_graph)["user_bundle"].todense()[off["user"] + 0]
    assert row[off["bundle"] + 0] == 0.5


def test_delete_all_edges_of_node(fig3_graph):
    view = delete_edges(fig3_graph, {"ub": [(0, 0), (0, 1)], "ui": [(0, 0), (0, 1)]})
    u0 = fig3_graph.offsets["user"]
    for name in ("user_item", "user_bundle"):
        assert not view.adjacency[name].todense()[u0].any()


def test_delete_block_kind(fig3_graph):
    view = delete_edges(fig3_graph, {"ub": [(2, 2)]}, kind="block")
    off = fig3_graph.offsets
    a = view.adjacency.a_hat.todense()
    assert a[off["user"] + 2, off["bundle"] + 2] == 0.0


def test_delete_missing_edge_is_contract_error(fig3_graph):
    with pytest.raises(ContractError):
        delete_edges(fig3_graph, {"ub": [(2, 0)]})


@given(st.integers(0, 2**32 - 1))
def test_leakage_exclusion_by_perturbation(seed):
    """Perturbing a deleted neighbour leaves the other endpoint's pre-activation unchanged."""
    rng = np.random.default_rng(seed)
    g = random_graph(rng, p=0.5)
    if g.edges_ub.shape[0] == 0:
        return
    u, b = (int(x) for x in g.edges_ub[rng.integers(g.edges_ub.shape[0])])
    off = g.offsets
    cfg = ModelConfig(embed_dim=3, hidden0=4, hidden1=4, n_layers=1)
    params = init_params(cfg, (g.n_users, g.n_items, g.n_bundles), rng)
    view = delete_edges(g, {"ub": [(u, b)]})
    before = view.adjacency["user_bundle"].dot(params["embedding"])[off["user"] + u].copy()
    back = view.adjacency["bundle_user"].dot(params["embedding"])[off["bundle"] + b].copy()
    params["embedding"][off["bundle"] + b] += rng.normal(size=3) * 10
    params["embedding"][off["user"] + u] += rng.normal(size=3) * 10
    after = view.adjacency["user_bundle"].dot(params["embedding"])[off["user"] + u]
    back_after = view.adjacency["bundle_user"].dot(params["embedding"])[off["bundle"] + b]
    assert np.array_equal(before, after)
    assert np.array_equal(back, back_after)


def test_bundle_size_zero_is_allowed():
    g = build_graph([(0, 0)], [], [], (1, 1, 1))
    forward_propagate(init_params(ModelConfig(embed_dim=2, hidden0=2, hidden1=2), (1, 1, 1),
                                  np.random.default_rng(0)),
                      build_relational_adjacency(g), ModelConfig(embed_dim=2, hidden0=2, hidden1=2))

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bundlenet.data import SyntheticSpec, generate_synthetic
from bundlenet.evaluation import (
    RankingSet,
    aggregate,
    evaluate,
    evaluate_ranking,
    make_split,
    metrics_at_k,
    rank_positive,
    ranks_from_matrix,
)
from bundlenet.graph import build_graph
from bundlenet.model import ModelConfig, init_params

from oracles import brute_force_rank


def oracle_params(split):
    """BPR-MF embeddings whose dot product is 1 exactly on each user's test bundle."""
    g = split.train_graph
    e = np.zeros((g.n_nodes, g.n_bundles))
    e[split.test.users, split.test.positives] = 1.0
    off = g.n_users + g.n_items
    e[off:off + g.n_bundles] = np.eye(g.n_bundles)
    return {"embedding": e}


@pytest.fixture(scope="module")
def synthetic():
    return generate_synthetic(SyntheticSpec(seed=3)).graph


def test_single_bundle_user_forced_case():
    ub = [(0, 0)] + [(1, b) for b in range(1, 5)]
    g = build_graph(ub, [], [], (2, 0, 100))
    s = make_split(g, np.random.default_rng(0))
    k = list(s.test.users).index(0)
    assert s.test.positives[k] == 0
    assert s.test.negatives[k].tolist() == list(range(1, 100))
    assert 0 in s.singleton_users.tolist()
    assert not s.train_graph.has_edges("ub", [0], [0]).any()


def test_split_holds_out_and_is_deterministic(synthetic):
    a = make_split(synthetic, np.random.default_rng(1))
    b = make_split(synthetic, np.random.default_rng(1))
    for part in ("test", "validation"):
        ra, rb = getattr(a, part), getattr(b, part)
        assert np.array_equal(ra.users, rb.users) and np.array_equal(ra.positives, rb.positives)
        assert all(np.array_equal(x, y) for x, y in zip(ra.negatives, rb.negatives))
    for ranking in (a.test, a.validation):
        assert synthetic.has_edges("ub", ranking.users, ranking.positives).all()
        assert not a.train_graph.has_edges("ub", ranking.users, ranking.positives).any()
        for u, neg in zip(ranking.users, ranking.negatives):
            assert not synthetic.has_edges("ub", np.full(neg.size, u), neg).any()
    held = a.test.users.size + a.validation.users.size
    assert a.train_graph.edges_ub.shape[0] == synthetic.edges_ub.shape[0] - held
    assert np.intersect1d(a.test.users, a.validation.users).size == a.validation.users.size
    # validation users keep a training interaction
    assert np.all(a.train_graph.degree("ub", "user")[a.validation.users] >= 1)


def test_shortfall_recorded():
    g = build_graph([(0, 0), (0, 1)], [], [], (1, 0, 5))
    s = make_split(g, np.random.default_rng(0), val_fraction=0.0)
    assert s.shortfall_users.tolist() == [0]
    assert s.test.negatives[0].size == 3


def test_rank_examples():
    s = np.linspace(0, 1, 100)
    assert rank_positive(s, 99) == 1
    assert rank_positive(s, 0) == 100
    t = np.zeros(100)
    t[[3, 7, 9]] = 1.0
    assert rank_positive(t, 3) == 3


def test_metric_triples():
    assert metrics_at_k(1, 5) == (1.0, 1.0, 1.0)
    assert metrics_at_k(3, 5) == (1.0, 1 / 3, 0.5)
    assert metrics_at_k(6, 5) == (0.0, 0.0, 0.0)


def test_rank_matches_sort_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100_000):
        n = int(rng.integers(1, 8))
        s = rng.integers(0, 4, size=n).astype(float)  # coarse values force ties
        p = int(rng.integers(n))
        assert rank_positive(s, p) == brute_force_rank(s, p)


def test_metric_orderings_exhaustive():
    for k in range(1, 101):
        for rank in range(1, 101):
            r, m, n = metrics_at_k(rank, k)
            assert 0 <= m <= n <= r <= 1
            r2, m2, n2 = metrics_at_k(rank, k + 1)
            assert r2 >= r and m2 >= m and n2 >= n


@given(st.lists(st.integers(1, 100), min_size=1, max_size=50))
def test_aggregate_monotone_in_k(ranks):
    agg = aggregate(np.array(ranks), range(1, 101))
    for metric in ("Recall", "MRR", "NDCG"):
        vals = [agg[f"{metric}@{k}"] for k in range(1, 101)]
        assert all(0 <= v <= 1 for v in vals)
        assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert agg["Recall@5"] == sum(r <= 5 for r in ranks) / len(ranks)


def test_ranks_from_matrix_agree_with_rank_positive():
    rng = np.random.default_rng(4)
    mat = rng.integers(0, 5, size=(3, 20)).astype(float)
    ranking = RankingSet(np.array([0, 1, 2, 1]), np.array([4, 0, 19, 7]),
                         [np.array([1, 2, 3]), np.arange(1, 20), np.arange(10), np.array([0, 8])])
    ranks = ranks_from_matrix(mat, ranking.users, ranking)
    for k in range(4):
        cand = np.concatenate([[ranking.positives[k]], ranking.negatives[k]])
        assert ranks[k] == rank_positive(mat[ranking.users[k], cand], 0)


def test_oracle_params_score_one(synthetic):
    split = make_split(synthetic, np.random.default_rng(0))
    rep = evaluate(oracle_params(split), split, ModelConfig(variant="bpr-mf"), ks=(1, 5))
    assert all(v == 1.0 for v in rep.metrics.values())


def test_random_params_near_null(synthetic):
    split = make_split(synthetic, np.random.default_rng(0))
    assert split.test.users.size >= 2000
    cfg = ModelConfig(embed_dim=8, hidden0=8, hidden1=8)
    params = init_params(cfg, (synthetic.n_users, synthetic.n_items, synthetic.n_bundles), np.random.default_rng(9))
    rep = evaluate(params, split, cfg)
    assert abs(rep["Recall@5"] - 0.05) <= 0.02


def test_constant_scores_are_pessimistic(synthetic):
    split = make_split(synthetic, np.random.default_rng(0))
    cfg = ModelConfig(embed_dim=4, hidden0=4, hidden1=4)
    params = {k: np.zeros_like(v) for k, v in
              init_params(cfg, (synthetic.n_users, synthetic.n_items, synthetic.n_bundles),
                          np.random.default_rng(0)).items()}
    rep = evaluate(params, split, cfg)
    assert rep["Recall@5"] == 0.0
    assert np.all(rep.ranks == 1 + np.array([n.size for n in split.test.negatives]))


def test_evaluate_is_pure(synthetic):
    split = make_split(synthetic, np.random.default_rng(0))
    cfg = ModelConfig(embed_dim=4, hidden0=4, hidden1=4)
    params = init_params(cfg, (synthetic.n_users, synthetic.n_items, synthetic.n_bundles), np.random.default_rng(1))
    a, b = evaluate(params, split, cfg, ks=(5, 10)), evaluate(params, split, cfg, ks=(5, 10))
    assert a.to_dict() == b.to_dict() and np.array_equal(a.ranks, b.ranks)
    assert "NDCG@10" in a.to_text()


def test_empty_ranking():
    g = build_graph([], [], [], (1, 1, 1))
    rep = evaluate_ranking({"embedding": np.zeros((3, 2))}, g, ModelConfig(variant="bpr-mf"), RankingSet.empty())
    assert rep.n_users == 0 and rep["Recall@5"] == 0.0
    assert math.isfinite(rep["NDCG@5"])

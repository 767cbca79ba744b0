"""Leave-one-out ranking evaluation with sampled negative candidates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from bundlenet.graph import TripartiteGraph
from bundlenet.model import ModelConfig, bundle_scores, representations

METRICS = ("Recall", "MRR", "NDCG")


@dataclass
class RankingSet:
    """One held-out positive bundle per user plus its negative candidates."""

    users: np.ndarray
    positives: np.ndarray
    negatives: list = field(default_factory=list)

    def __len__(self):
        return int(self.users.size)

    @classmethod
    def empty(cls) -> "RankingSet":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), [])


@dataclass
class EvalSplit:
    train_graph: TripartiteGraph
    test: RankingSet
    validation: RankingSet
    # users whose only bundle interaction went to the test set
    singleton_users: np.ndarray
    # users with fewer than the requested number of negative candidates
    shortfall_users: np.ndarray
    n_negatives: int = 99


def _sample_negatives(g, user, n_negatives, rng):
    seen = g.neighbors("ub", user)
    pool = np.setdiff1d(np.arange(g.n_bundles, dtype=np.int64), seen, assume_unique=True)
    if pool.size <= n_negatives:
        return pool.copy(), pool.size < n_negatives
    return np.sort(rng.choice(pool, size=n_negatives, replace=False)), False


def make_split(g: TripartiteGraph, rng: np.random.Generator, n_negatives: int = 99,
               val_fraction: float = 0.1) -> EvalSplit:
    """Hold out one bundle per user for test, and one more for a fraction of users for validation.

    Validation users are drawn among those left with at least two training
    bundles, so every validation user keeps one training interaction.
    Negatives never include any bundle the user interacted with in ``g``.
    """
    deg = g.degree("ub", "user")
    users = np.flatnonzero(deg >= 1)
    test_pos = np.empty(users.size, dtype=np.int64)
    for k, u in enumerate(users):
        nb = g.neighbors("ub", u)
        test_pos[k] = nb[rng.integers(nb.size)]
    eligible = users[deg[users] >= 3]
    n_val = int(round(val_fraction * eligible.size))
    val_users = np.sort(rng.choice(eligible, size=n_val, replace=False)) if n_val else np.zeros(0, np.int64)
    test_of = dict(zip(users.tolist(), test_pos.tolist()))
    val_pos = np.empty(val_users.size, dtype=np.int64)
    for k, u in enumerate(val_users):
        nb = g.neighbors("ub", u)
        nb = nb[nb != test_of[int(u)]]
        val_pos[k] = nb[rng.integers(nb.size)]

    shortfall = []
    test_neg = []
    for u in users:
        neg, short = _sample_negatives(g, u, n_negatives, rng)
        test_neg.append(neg)
        if short:
            shortfall.append(int(u))
    val_neg = [_sample_negatives(g, u, n_negatives, rng)[0] for u in val_users]

    held = np.concatenate([np.stack([users, test_pos], 1), np.stack([val_users, val_pos], 1)])
    train = g.without(ub=held)
    return EvalSplit(
        train_graph=train,
        test=RankingSet(users.astype(np.int64), test_pos, test_neg),
        validation=RankingSet(val_users.astype(np.int64), val_pos, val_neg),
        singleton_users=users[deg[users] == 1].astype(np.int64),
        shortfall_users=np.asarray(shortfall, dtype=np.int64),
        n_negatives=n_negatives,
    )


def rank_positive(scores, positive_index: int) -> int:
    """1 + number of other candidates scoring at least as high as the positive."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = scores[positive_index]
    ahead = int(np.count_nonzero(scores >= pos)) - 1
    return 1 + ahead


def metrics_at_k(rank: int, k: int) -> tuple[float, float, float]:
    """(Recall@K, MRR@K, NDCG@K) for a single positive at ``rank``."""
    if rank <= k:
        return 1.0, 1.0 / rank, 1.0 / math.log2(rank + 1)
    return 0.0, 0.0, 0.0


@dataclass
class RankingReport:
    users: np.ndarray
    ranks: np.ndarray
    ks: tuple
    metrics: dict
    shortfall_users: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def n_users(self) -> int:
        return int(self.users.size)

    def __getitem__(self, key: str) -> float:
        return self.metrics[key]

    def to_dict(self) -> dict:
        return {
            "metrics": {k: self.metrics[k] for k in sorted(self.metrics)},
            "n_users": self.n_users,
            "n_shortfall_users": int(self.shortfall_users.size),
            "shortfall_users": self.shortfall_users.tolist(),
        }

    def to_text(self, label: str = "model") -> str:
        cols = [f"{m}@{k}" for k in self.ks for m in METRICS]
        width = max(12, len(label) + 2)
        head = f"{'':<{width}}" + "".join(f"{c:>11}" for c in cols)
        row = f"{label:<{width}}" + "".join(f"{self.metrics[c]:>11.4f}" for c in cols)
        return f"{head}\n{row}\nusers: {self.n_users}  shortfall: {self.shortfall_users.size}\n"


def ranks_from_matrix(score_matrix: np.ndarray, rows: np.ndarray, ranking: RankingSet) -> np.ndarray:
    ranks = np.empty(len(ranking), dtype=np.int64)
    for k in range(len(ranking)):
        s = score_matrix[rows[k]]
        pos = s[ranking.positives[k]]
        ranks[k] = 1 + int(np.count_nonzero(s[ranking.negatives[k]] >= pos))
    return ranks


def aggregate(ranks: np.ndarray, ks) -> dict:
    out = {}
    ranks = np.asarray(ranks, dtype=np.int64)
    n = max(ranks.size, 1)
    for k in ks:
        hit = ranks <= k
        out[f"Recall@{k}"] = float(hit.sum() / n)
        out[f"MRR@{k}"] = float(np.where(hit, 1.0 / ranks, 0.0).sum() / n)
        out[f"NDCG@{k}"] = float(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0).sum() / n)
    return out


def evaluate_ranking(params: dict, graph: TripartiteGraph, config: ModelConfig, ranking: RankingSet,
                     ks=(5,), reps=None, shortfall_users=None, cold_start="auto") -> RankingReport:
    """Rank each user's positive among its candidates using propagation on ``graph``."""
    ks = tuple(int(k) for k in ks)
    if len(ranking) == 0:
        return RankingReport(ranking.users, np.zeros(0, np.int64), ks, aggregate([], ks))
    if reps is None:
        reps = representations(params, graph, config)
    users, rows = np.unique(ranking.users, return_inverse=True)
    scores = -bundle_scores(params, reps, graph, config, users, cold_start=cold_start, deficit=True)
    ranks = ranks_from_matrix(scores, rows, ranking)
    short = np.zeros(0, np.int64) if shortfall_users is None else np.asarray(shortfall_users, np.int64)
    return RankingReport(ranking.users, ranks, ks, aggregate(ranks, ks), short)


def evaluate(params: dict, split: EvalSplit, config: ModelConfig, ks=(5,)) -> RankingReport:
    """Test-set report: propagation on the full training graph, no edge deletion."""
    return evaluate_ranking(params, split.train_graph, config, split.test, ks,
                            shortfall_users=split.shortfall_users)

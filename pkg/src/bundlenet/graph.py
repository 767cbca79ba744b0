"""User-item-bundle tripartite graph and its propagation structures.

Global node order is users, then items, then bundles, matching the block
layout of the normalized adjacency.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bundlenet.errors import ContractError, LoadError
from bundlenet.numcore.sparse import CSRMatrix

# edge set name -> (source side, target side)
EDGE_SIDES = {"ub": ("user", "bundle"), "ui": ("user", "item"), "bi": ("bundle", "item")}

# relation name -> (edge set, reversed?)
RELATIONS = {
    "user_item": ("ui", False),
    "item_user": ("ui", True),
    "user_bundle": ("ub", False),
    "bundle_user": ("ub", True),
    "bundle_item": ("bi", False),
    "item_bundle": ("bi", True),
}


def _dedup_pairs(pairs, n_left, n_right, label):
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2) if len(pairs) else np.zeros((0, 2), np.int64)
    if arr.size:
        bad = (arr[:, 0] < 0) | (arr[:, 0] >= n_left) | (arr[:, 1] < 0) | (arr[:, 1] >= n_right)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise LoadError(
                f"{label} edge #{k} ({arr[k, 0]}, {arr[k, 1]}) out of range for counts ({n_left}, {n_right})"
            )
    keys = np.unique(arr[:, 0] * n_right + arr[:, 1]) if arr.size else np.zeros(0, np.int64)
    out = np.empty((keys.size, 2), dtype=np.int64)
    if keys.size:
        out[:, 0], out[:, 1] = np.divmod(keys, n_right)
    out.flags.writeable = False
    keys.flags.writeable = False
    return out, keys


@dataclass(frozen=True, eq=False)
class TripartiteGraph:
    """Immutable node counts plus three deduplicated, sorted edge sets."""

    n_users: int
    n_items: int
    n_bundles: int
    edges_ub: np.ndarray
    edges_ui: np.ndarray
    edges_bi: np.ndarray
    _keys: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items + self.n_bundles

    @property
    def offsets(self) -> dict:
        return {"user": 0, "item": self.n_users, "bundle": self.n_users + self.n_items}

    def count(self, side: str) -> int:
        return {"user": self.n_users, "item": self.n_items, "bundle": self.n_bundles}[side]

    def edges(self, kind: str) -> np.ndarray:
        return {"ub": self.edges_ub, "ui": self.edges_ui, "bi": self.edges_bi}[kind]

    def keys(self, kind: str) -> np.ndarray:
        """Sorted integer encoding ``left * n_right + right`` of an edge set."""
        return self._keys[kind]

    def has_edges(self, kind: str, left, right) -> np.ndarray:
        n_right = self.count(EDGE_SIDES[kind][1])
        q = np.asarray(left, dtype=np.int64) * n_right + np.asarray(right, dtype=np.int64)
        keys = self._keys[kind]
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, max(keys.size - 1, 0))
        return keys[pos] == q if keys.size else np.zeros(q.shape, dtype=bool)

    def neighbors(self, kind: str, left: int) -> np.ndarray:
        e = self.edges(kind)
        lo, hi = np.searchsorted(e[:, 0], [left, left + 1])
        return e[lo:hi, 1]

    def degree(self, kind: str, side: str) -> np.ndarray:
        col = 0 if EDGE_SIDES[kind][0] == side else 1
        return np.bincount(self.edges(kind)[:, col], minlength=self.count(side))

    def without(self, **deleted) -> "TripartiteGraph":
        """Copy with the given pairs removed, e.g. ``g.without(ub=pairs)``.

        Every pair must exist; a missing pair indicates a sampler bug.
        """
        new = {"ub": self.edges_ub, "ui": self.edges_ui, "bi": self.edges_bi}
        for kind, pairs in deleted.items():
            pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
            if pairs.size == 0:
                continue
            present = self.has_edges(kind, pairs[:, 0], pairs[:, 1])
            if not present.all():
                k = int(np.flatnonzero(~present)[0])
                raise ContractError(f"cannot delete nonexistent {kind} edge ({pairs[k, 0]}, {pairs[k, 1]})")
            n_right = self.count(EDGE_SIDES[kind][1])
            drop = pairs[:, 0] * n_right + pairs[:, 1]
            keep = ~np.isin(self._keys[kind], drop)
            new[kind] = self.edges(kind)[keep]
        return build_graph(new["ub"], new["ui"], new["bi"], (self.n_users, self.n_items, self.n_bundles))

    def bipartite(self) -> "TripartiteGraph":
        """The user-bundle graph alone (item relations emptied)."""
        empty = np.zeros((0, 2), dtype=np.int64)
        return build_graph(self.edges_ub, empty, empty, (self.n_users, self.n_items, self.n_bundles))


def build_graph(edges_ub, edges_ui, edges_bi, counts) -> TripartiteGraph:
    """Validate, deduplicate and freeze the three edge sets.

    ``counts`` is ``(n_users, n_items, n_bundles)``.  Pairs are given in
    local per-side indices: (user, bundle), (user, item), (bundle, item).
    """
    n_u, n_i, n_b = (int(c) for c in counts)
    if min(n_u, n_i, n_b) < 0:
        raise LoadError(f"negative node count in {counts}")
    ub, kub = _dedup_pairs(edges_ub, n_u, n_b, "user-bundle")
    ui, kui = _dedup_pairs(edges_ui, n_u, n_i, "user-item")
    bi, kbi = _dedup_pairs(edges_bi, n_b, n_i, "bundle-item")
    return TripartiteGraph(n_u, n_i, n_b, ub, ui, bi, {"ub": kub, "ui": kui, "bi": kbi})


def _global_pairs(g: TripartiteGraph, kind: str):
    left, right = EDGE_SIDES[kind]
    off = g.offsets
    e = g.edges(kind)
    return e[:, 0] + off[left], e[:, 1] + off[right]


# ---------------------------------------------------------------- plain GCN structure

@dataclass(frozen=True, eq=False)
class BlockAdjacency:
    """Symmetric normalized adjacency with self-loops over all N nodes."""

    a_hat: CSRMatrix
    n_users: int
    n_items: int
    n_bundles: int

    @property
    def n_nodes(self) -> int:
        return self.a_hat.shape[0]

    def node(self, global_index: int) -> tuple[str, int]:
        if global_index < self.n_users:
            return "user", global_index
        if global_index < self.n_users + self.n_items:
            return "item", global_index - self.n_users
        return "bundle", global_index - self.n_users - self.n_items


def build_block_adjacency(g: TripartiteGraph) -> BlockAdjacency:
    n = g.n_nodes
    rows, cols = [np.arange(n)], [np.arange(n)]
    for kind in ("ui", "ub", "bi"):
        a, b = _global_pairs(g, kind)
        rows += [a, b]
        cols += [b, a]
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    deg = np.bincount(rows, minlength=n).astype(np.float64)
    # deg_i * deg_j is commutative, so A_hat[i, j] and A_hat[j, i] are bit-identical
    vals = 1.0 / np.sqrt(deg[rows] * deg[cols])
    return BlockAdjacency(CSRMatrix.from_coo((n, n), rows, cols, vals), g.n_users, g.n_items, g.n_bundles)


# ---------------------------------------------------------------- relational structure

@dataclass(frozen=True, eq=False)
class RelationalAdjacency:
    """Six N x N row-normalized relation matrices (value ``1/|N_i^r|``)."""

    relations: dict
    n_users: int
    n_items: int
    n_bundles: int

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items + self.n_bundles

    def __getitem__(self, name: str) -> CSRMatrix:
        return self.relations[name]


def build_relational_adjacency(g: TripartiteGraph) -> RelationalAdjacency:
    n = g.n_nodes
    mats = {}
    for name, (kind, reverse) in RELATIONS.items():
        a, b = _global_pairs(g, kind)
        src, dst = (b, a) if reverse else (a, b)
        deg = np.bincount(src, minlength=n).astype(np.float64)
        vals = 1.0 / deg[src] if src.size else np.zeros(0)
        mats[name] = CSRMatrix.from_coo((n, n), src, dst, vals)
    return RelationalAdjacency(mats, g.n_users, g.n_items, g.n_bundles)


# ---------------------------------------------------------------- edge-deleted views

@dataclass(frozen=True, eq=False)
class EdgeDeletedView:
    """Propagation structure rebuilt after removing a batch of edges.

    ``adjacency`` is a :class:`RelationalAdjacency` or :class:`BlockAdjacency`
    computed on the surviving graph, so normalizations reflect survivors only.
    """

    base: TripartiteGraph
    deleted: dict
    graph: TripartiteGraph
    adjacency: object


def delete_edges(g: TripartiteGraph, deleted: dict, kind: str = "relational") -> EdgeDeletedView:
    """Remove ``deleted`` (edge-set name -> pairs) and rebuild the structure.

    ``kind`` picks ``"relational"`` or ``"block"``.  ``g`` is not modified.
    """
    survivor = g.without(**deleted)
    if kind == "relational":
        adj = build_relational_adjacency(survivor)
    elif kind == "block":
        adj = build_block_adjacency(survivor)
    else:
        raise ValueError(f"unknown adjacency kind {kind!r}")
    return EdgeDeletedView(g, dict(deleted), survivor, adj)

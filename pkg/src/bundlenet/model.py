"""Scoring models: relational GCN (BundleNet), plain GCN baselines, BPR-MF.

Parameters live in a plain ``dict[str, np.ndarray]``.  Weights use the
row-vector convention ``H @ W`` with ``W`` shaped ``(in, out)``.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np

from bundlenet import numcore as nc
from bundlenet.errors import ConfigError, ContractError, ShapeError, UnknownIdError
from bundlenet.graph import (
    RELATIONS,
    BlockAdjacency,
    RelationalAdjacency,
    TripartiteGraph,
    build_block_adjacency,
    build_relational_adjacency,
)
from bundlenet.numcore import _kernels

VARIANTS = ("bundlenet", "gcn-tri", "gcn-bi", "bpr-mf")
TASK_SIDE = {"item": "item", "bundle": "bundle"}


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 32
    n_layers: int = 2
    hidden0: int = 64
    hidden1: int = 256
    # output width of the head's second layer; the head emits one logit, so unused
    hidden2: int = 128
    variant: str = "bundlenet"
    dropout: float = 0.0
    # weight on the item term of the bundle score; 1.0 is the plain sum
    item_weight: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("embed_dim", "n_layers", "hidden0", "hidden1", "hidden2"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def uses_items(self) -> bool:
        """Whether the bundle score includes the aggregated item term."""
        return self.variant in ("bundlenet", "gcn-tri")

    @property
    def propagates(self) -> bool:
        return self.variant != "bpr-mf"

    @property
    def adjacency_kind(self) -> str:
        return "relational" if self.variant == "bundlenet" else "block"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        kw = {}
        for f in fields(cls):
            if f.name in d:
                kw[f.name] = type(f.default)(d[f.name])
        return cls(**kw)


@dataclass
class NodeRepresentations:
    layers: list  # H^1..H^L, each N x d0 (Var)
    concat: "nc.Var"  # N x (L * d0)


# ---------------------------------------------------------------- parameters

def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def head_names(task: str) -> list[str]:
    return [f"head_{task}.{p}" for p in ("w1", "b1", "w2", "b2")]


def init_params(config: ModelConfig, counts, rng: np.random.Generator) -> dict:
    """Fresh parameters for ``counts = (n_users, n_items, n_bundles)``."""
    n = int(sum(counts))
    d, d0, d1, L = config.embed_dim, config.hidden0, config.hidden1, config.n_layers
    params = {"embedding": rng.normal(0.0, 0.1, size=(n, d))}
    if not config.propagates:
        return params
    for layer in range(L):
        fan_in = d if layer == 0 else d0
        if config.variant == "bundlenet":
            params[f"layer{layer}.self"] = _glorot(rng, fan_in, d0)
            for rel in RELATIONS:
                params[f"layer{layer}.{rel}"] = _glorot(rng, fan_in, d0)
        else:
            params[f"layer{layer}.weight"] = _glorot(rng, fan_in, d0)
    tasks = ("item", "bundle") if config.uses_items else ("bundle",)
    width = 2 * L * d0
    for task in tasks:
        w1, b1, w2, b2 = head_names(task)
        params[w1] = _glorot(rng, width, d1)
        params[b1] = np.zeros((1, d1))
        params[w2] = _glorot(rng, d1, 1)
        params[b2] = np.zeros((1, 1))
    return params


def regularized_names(params: dict) -> list[str]:
    """Parameters under the L2 penalty: everything except biases."""
    return [k for k in params if not k.split(".")[-1].startswith("b")]


def task_param_names(params: dict, task: str) -> list[str]:
    """Shared parameters plus the head of ``task``; the other head is left alone."""
    other = "bundle" if task == "item" else "item"
    return [k for k in params if not k.startswith(f"head_{other}.")]


def bind(params: dict, tape: "nc.Tape | None" = None, names=None) -> dict:
    """Wrap arrays as tape variables; unnamed ones become constants."""
    if tape is None:
        tape = nc.Tape(enabled=False)
    names = set(params if names is None else names)
    return {k: (tape.param(k, v) if k in names else tape.const(v)) for k, v in params.items()}


def _as_vars(params: dict) -> dict:
    if params and isinstance(next(iter(params.values())), nc.Var):
        return params
    return bind(params)


# ---------------------------------------------------------------- propagation

def build_adjacency(g: TripartiteGraph, config: ModelConfig):
    """Propagation structure the variant runs on, or ``None`` for BPR-MF."""
    if config.variant == "bundlenet":
        return build_relational_adjacency(g)
    if config.variant == "gcn-tri":
        return build_block_adjacency(g)
    if config.variant == "gcn-bi":
        return build_block_adjacency(g.bipartite())
    return None


def _dropout(h, p, rng):
    if p <= 0.0 or rng is None:
        return h
    keep = (rng.random(h.shape) >= p) / (1.0 - p)
    return nc.mul(h, keep)


def forward_propagate(params: dict, adj, config: ModelConfig, rng=None) -> NodeRepresentations:
    """Stack ``n_layers`` propagation layers starting from the embedding table.

    ``rng`` switches on training-mode dropout; without it the pass is
    deterministic.
    """
    p = _as_vars(params)
    h = p["embedding"]
    if adj is None:
        raise ContractError(f"variant {config.variant!r} has no propagation")
    if adj.n_nodes != h.shape[0]:
        raise ShapeError(f"adjacency has {adj.n_nodes} nodes, embedding table has {h.shape[0]} rows")
    layers = []
    for layer in range(config.n_layers):
        if isinstance(adj, RelationalAdjacency):
            z = nc.matmul(h, p[f"layer{layer}.self"])
            for rel in RELATIONS:
                a = adj[rel]
                if a.nnz == 0:
                    continue
                z = nc.add(z, nc.matmul(nc.spmm(a, h), p[f"layer{layer}.{rel}"]))
        elif isinstance(adj, BlockAdjacency):
            z = nc.spmm(adj.a_hat, nc.matmul(h, p[f"layer{layer}.weight"]))
        else:
            raise TypeError(f"unsupported adjacency {type(adj).__name__}")
        h = _dropout(nc.relu(z), config.dropout, rng)
        layers.append(h)
    concat = layers[0] if len(layers) == 1 else nc.concat_cols(layers)
    return NodeRepresentations(layers, concat)


# ---------------------------------------------------------------- scoring

def _check_ids(ids, count, side):
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= count):
        bad = ids[(ids < 0) | (ids >= count)][0]
        raise UnknownIdError(f"{side} id {bad} out of range [0, {count})")
    return ids


def score_pairs(params: dict, reps: NodeRepresentations, users, targets, task: str, counts) -> "nc.Var":
    """Head probabilities for (user, target) pairs as an ``(n, 1)`` variable.

    ``counts`` is ``(n_users, n_items, n_bundles)``; ids are local per type.
    """
    if task not in TASK_SIDE:
        raise ContractError(f"task must be 'item' or 'bundle', got {task!r}")
    n_u, n_i, n_b = counts
    p = _as_vars(params)
    if head_names(task)[0] not in p:
        raise ContractError(f"model has no {task} head")
    users = _check_ids(users, n_u, "user")
    if task == "item":
        targets = _check_ids(targets, n_i, "item") + n_u
    else:
        targets = _check_ids(targets, n_b, "bundle") + n_u + n_i
    if users.shape != targets.shape:
        raise ShapeError("users and targets must have equal length")
    w1, b1, w2, b2 = (p[k] for k in head_names(task))
    x = nc.concat_cols([nc.row_select(reps.concat, users), nc.row_select(reps.concat, targets)])
    hidden = nc.relu(nc.add(nc.matmul(x, w1), b1))
    return nc.sigmoid(nc.add(nc.matmul(hidden, w2), b2))


def bpr_mf_scores(params: dict, users, bundles, counts) -> "nc.Var":
    """Dot products ``e_u . e_b`` as an ``(n, 1)`` variable."""
    n_u, n_i, n_b = counts
    p = _as_vars(params)
    users = _check_ids(users, n_u, "user")
    bundles = _check_ids(bundles, n_b, "bundle") + n_u + n_i
    e = p["embedding"]
    prod = nc.mul(nc.row_select(e, users), nc.row_select(e, bundles))
    return nc.matmul(prod, np.ones((e.shape[1], 1)))


def bpr_mf_score(params: dict, user: int, bundle: int, counts) -> float:
    return float(bpr_mf_scores(params, [user], [bundle], counts).value[0, 0])


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def pair_logits(params: dict, reps_concat: np.ndarray, users, task: str, counts) -> np.ndarray:
    """Head logits for every (user in ``users``, target of ``task``)."""
    n_u, n_i, n_b = counts
    w1, b1, w2, b2 = (np.asarray(params[k]) for k in head_names(task))
    width = reps_concat.shape[1]
    users = _check_ids(users, n_u, "user")
    lo = n_u if task == "item" else n_u + n_i
    hi = lo + (n_i if task == "item" else n_b)
    left = reps_concat[users] @ w1[:width] + b1
    right = reps_concat[lo:hi] @ w1[width:]
    return _kernels.pair_logits(left, right, w2, float(b2[0, 0]))


def pair_matrix(params: dict, reps_concat: np.ndarray, users, task: str, counts) -> np.ndarray:
    """Head probabilities for every (user in ``users``, target of ``task``)."""
    return stable_sigmoid(pair_logits(params, reps_concat, users, task, counts))


def bundle_item_sums(g: TripartiteGraph):
    """CSR indicator of bundle membership and the bundle sizes."""
    bi = g.edges_bi
    ind = nc.CSRMatrix.from_coo((g.n_bundles, g.n_items), bi[:, 0], bi[:, 1])
    return ind, np.bincount(bi[:, 0], minlength=g.n_bundles)


def _cold_mask(g, cold_start):
    if isinstance(cold_start, str) and cold_start == "auto":
        return g.degree("ub", "bundle") == 0
    if cold_start is False or cold_start is None:
        return np.zeros(g.n_bundles, dtype=bool)
    return np.asarray(cold_start, dtype=bool)


def bundle_scores(params: dict, reps_concat, g: TripartiteGraph, config: ModelConfig, users,
                  cold_start="auto", chunk=512, deficit=False) -> np.ndarray:
    """Inference score of every bundle for each user in ``users``.

    The score is the bundle-head probability plus ``item_weight`` times the
    mean item-head probability over the bundle's items.  ``cold_start`` is
    ``"auto"`` (zero the bundle term for bundles with no user interactions
    in ``g``), a boolean mask over bundles, or ``False``.

    ``deficit=True`` returns ``max_score - score`` instead, computed from
    ``sigmoid(-logit)`` so it keeps full precision where the probabilities
    round to 1.  Sorting ascending by the deficit ranks exactly as sorting
    descending by the score would in exact arithmetic.  BPR-MF returns raw
    dot products (negated for ``deficit``).
    """
    counts = (g.n_users, g.n_items, g.n_bundles)
    users = _check_ids(users, g.n_users, "user")
    if config.variant == "bpr-mf":
        e = np.asarray(params["embedding"])
        off = g.n_users + g.n_items
        dots = e[users] @ e[off:off + g.n_bundles].T
        return -dots if deficit else dots
    cold = _cold_mask(g, cold_start)
    sign = -1.0 if deficit else 1.0
    if config.uses_items:
        ind, size = bundle_item_sums(g)
        if np.any(size == 0):
            warnings.warn(f"{int((size == 0).sum())} bundle(s) have no items; their item term is 0",
                          stacklevel=2)
        safe = np.where(size > 0, size, 1).astype(np.float64)
    out = np.empty((users.size, g.n_bundles))
    for start in range(0, users.size, chunk):
        part = users[start:start + chunk]
        term = stable_sigmoid(sign * pair_logits(params, reps_concat, part, "bundle", counts))
        term[:, cold] = 1.0 if deficit else 0.0
        if config.uses_items:
            p_ui = stable_sigmoid(sign * pair_logits(params, reps_concat, part, "item", counts))
            item_term = ind.dot(p_ui.T).T / safe
            if deficit:
                # an empty bundle has item probability 0, i.e. a full deficit
                item_term[:, size == 0] = 1.0
            term += config.item_weight * item_term
        out[start:start + chunk] = term
    return out


def inference_score(params: dict, reps: NodeRepresentations, user: int, bundle: int, bundle_items,
                    cold_start: bool, counts, item_weight: float = 1.0) -> float:
    """Scalar bundle preference for one (user, bundle) pair."""
    n_u, n_i, n_b = counts
    if not 0 <= int(bundle) < n_b:
        raise UnknownIdError(f"bundle id {bundle} out of range [0, {n_b})")
    p_ub = 0.0 if cold_start else float(score_pairs(params, reps, [user], [bundle], "bundle", counts).value[0, 0])
    items = sorted(int(i) for i in bundle_items)
    if not items:
        warnings.warn(f"bundle {bundle} has no items; item term is 0", stacklevel=2)
        return p_ub
    probs = score_pairs(params, reps, [user] * len(items), items, "item", counts).value[:, 0]
    total = 0.0
    for v in probs:
        total += float(v)
    return p_ub + item_weight * (total / len(items))


def representations(params: dict, g: TripartiteGraph, config: ModelConfig) -> np.ndarray:
    """Deterministic (dropout-free) concatenated node representations on ``g``."""
    if not config.propagates:
        return np.asarray(params["embedding"])
    adj = build_adjacency(g, config)
    return forward_propagate(params, adj, config).concat.value

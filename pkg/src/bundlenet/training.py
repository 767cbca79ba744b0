"""BPR triplet training with leakage-safe mini-batches and multi-task schedules."""
from __future__ import annotations

import copy
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from bundlenet import numcore as nc
from bundlenet.errors import ConfigError, ContractError
from bundlenet.evaluation import RankingSet, evaluate_ranking
from bundlenet.graph import TripartiteGraph, delete_edges
from bundlenet.model import (
    ModelConfig,
    bind,
    build_adjacency,
    bpr_mf_scores,
    forward_propagate,
    init_params,
    regularized_names,
    score_pairs,
    task_param_names,
)

log = logging.getLogger(__name__)

SCHEDULES = ("pretrain", "alternating", "bundle-only")
TASK_EDGES = {"item": "ui", "bundle": "ub"}
# triplets per backward pass; larger batches accumulate gradients
GRAD_CHUNK = 4096


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    l2: float = 1e-5
    batch_size: int = 1024
    schedule: str = "pretrain"
    minibatch: bool = True
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    eval_k: int = 5
    # run a finite-difference spot check on every gradient step (slow; tests only)
    grad_check: bool = False

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.lr <= 0 or self.l2 < 0:
            raise ConfigError("lr must be positive and l2 non-negative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1 or self.eval_k < 1:
            raise ConfigError("batch_size, max_epochs, patience and eval_k must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TripletBatch:
    task: str
    users: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __len__(self):
        return int(self.users.size)

    def slice(self, start, stop) -> "TripletBatch":
        return TripletBatch(self.task, self.users[start:stop], self.positives[start:stop],
                            self.negatives[start:stop])

    @property
    def deletable_edges(self) -> np.ndarray:
        """The batch's (user, positive) edges, deduplicated."""
        return np.unique(np.stack([self.users, self.positives], axis=1), axis=0)


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("nan")
    stopped_epoch: int = 0
    wall_clock: float = 0.0

    def log_lines(self) -> list[str]:
        lines = []
        for rec in self.epochs:
            losses = " ".join(f"loss_{t}={v:.6f}" for t, v in rec["loss"].items())
            lines.append(f"epoch={rec['epoch']} task={rec['task']} {losses} val_ndcg@{rec['k']}={rec['val']:.6f}")
        return lines

    def to_dict(self) -> dict:
        # wall-clock is left out so reports are reproducible byte for byte
        return {"epochs": self.epochs, "best_epoch": self.best_epoch,
                "best_metric": self.best_metric, "stopped_epoch": self.stopped_epoch}


# ---------------------------------------------------------------- sampling

def sample_triplets(g: TripartiteGraph, task: str, batch_size: int, rng: np.random.Generator,
                    positives=None, max_rounds: int = 100) -> TripletBatch:
    """Draw (user, positive, negative) triplets for ``task``.

    Positives are training edges, uniformly at random or the edge ids given
    in ``positives``.  Negatives are uniform over the targets the user has
    not interacted with, by rejection.  Edges whose user has interacted
    with every target are swapped for another edge, and dropped if no
    usable edge turns up.
    """
    kind = TASK_EDGES[task]
    edges = g.edges(kind)
    n_edges = edges.shape[0]
    if n_edges == 0:
        raise ContractError(f"graph has no {kind} edges to sample for task {task!r}")
    n_targets = g.count("item" if task == "item" else "bundle")
    if positives is None:
        ids = rng.integers(n_edges, size=batch_size)
    else:
        ids = np.asarray(positives, dtype=np.int64).copy()
    saturated = g.degree(kind, "user") >= n_targets
    bad = saturated[edges[ids, 0]]
    for _ in range(10):
        if not bad.any():
            break
        ids[bad] = rng.integers(n_edges, size=int(bad.sum()))
        bad = saturated[edges[ids, 0]]
    ids = ids[~bad]
    users, pos = edges[ids, 0], edges[ids, 1]
    neg = rng.integers(n_targets, size=ids.size)
    hit = g.has_edges(kind, users, neg)
    for _ in range(max_rounds):
        if not hit.any():
            break
        neg[hit] = rng.integers(n_targets, size=int(hit.sum()))
        hit = g.has_edges(kind, users, neg)
    keep = ~hit
    return TripletBatch(task, users[keep], pos[keep], neg[keep])


# ---------------------------------------------------------------- loss

def bpr_loss(pos_scores, neg_scores, reg_params, l2: float) -> "nc.Var":
    """Mean of ``-ln sigmoid(pos - neg)`` plus ``l2 * sum ||theta||^2``."""
    if pos_scores.shape[0] == 0:
        raise ContractError("bpr_loss on an empty batch")
    if pos_scores.shape != neg_scores.shape:
        raise ContractError(f"score shapes differ: {pos_scores.shape} vs {neg_scores.shape}")
    return _bpr(pos_scores, neg_scores, reg_params, l2)


def _bpr(pos_scores, neg_scores, reg_params, l2, data_weight=1.0):
    loss = nc.mean(nc.softplus(nc.sub(neg_scores, pos_scores)))
    if data_weight != 1.0:
        loss = nc.scale(loss, data_weight)
    if l2 > 0:
        for p in reg_params:
            loss = nc.add(loss, nc.scale(nc.sum_squares(p), l2))
    return loss


def batch_loss(params_vars: dict, adj, batch: TripletBatch, model_config: ModelConfig, l2: float,
               counts, dropout_rng=None, reg_names=None, data_weight=1.0) -> "nc.Var":
    """BPR loss of ``batch``; the data term is scaled by ``data_weight``."""
    if len(batch) == 0:
        raise ContractError("bpr_loss on an empty batch")
    if model_config.propagates:
        reps = forward_propagate(params_vars, adj, model_config, rng=dropout_rng)
        pos = score_pairs(params_vars, reps, batch.users, batch.positives, batch.task, counts)
        neg = score_pairs(params_vars, reps, batch.users, batch.negatives, batch.task, counts)
    else:
        pos = bpr_mf_scores(params_vars, batch.users, batch.positives, counts)
        neg = bpr_mf_scores(params_vars, batch.users, batch.negatives, counts)
    names = regularized_names(params_vars) if reg_names is None else reg_names
    return _bpr(pos, neg, [params_vars[n] for n in names], l2, data_weight)


def relative_error(analytic: float, numeric: float, floor: float = 1e-5) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor absorbs differencing noise near zero."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_difference_check(loss_fn, params: dict, grads: dict, rng, n_checks: int = 3,
                            h: float = 1e-6, rtol: float = 1e-3, names=None) -> list[tuple]:
    """Compare ``grads`` against central differences at random coordinates.

    ``loss_fn(params) -> float`` must be deterministic.  Returns the
    (name, index, analytic, numeric) tuples checked; raises on mismatch.
    """
    names = list(params if names is None else names)
    out = []
    for _ in range(n_checks):
        name = names[rng.integers(len(names))]
        p = params[name]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        old = p[idx]
        p[idx] = old + h
        up = loss_fn(params)
        p[idx] = old - h
        down = loss_fn(params)
        p[idx] = old
        numeric = (up - down) / (2 * h)
        analytic = float(grads[name][idx])
        if relative_error(analytic, numeric) > rtol:
            raise AssertionError(f"gradient check failed for {name}{idx}: analytic {analytic} vs numeric {numeric}")
        out.append((name, idx, analytic, numeric))
    return out


# ---------------------------------------------------------------- epochs

def _propagation_base(g: TripartiteGraph, model_config: ModelConfig) -> TripartiteGraph:
    return g.bipartite() if model_config.variant == "gcn-bi" else g


def _step(params, state, g, adj, batch, model_config, train_config, rng):
    counts = (g.n_users, g.n_items, g.n_bundles)
    names = task_param_names(params, batch.task)
    reg = [n for n in regularized_names(params) if n in names]
    step_seed = int(rng.integers(2**63 - 1))

    def dropout_rng():
        return np.random.default_rng(step_seed) if model_config.dropout > 0 else None

    # large batches accumulate gradients chunk by chunk to bound tape memory;
    # propagation is recomputed per chunk with the same dropout mask
    n = len(batch)
    parts = [(batch.slice(i, i + GRAD_CHUNK), i == 0) for i in range(0, n, GRAD_CHUNK)]
    grads, value = None, 0.0
    for part, first in parts:
        tape = nc.Tape()
        loss = batch_loss(bind(params, tape, names), adj, part, model_config,
                          train_config.l2 if first else 0.0, counts, dropout_rng(), reg, len(part) / n)
        g_part = tape.backward(loss)
        value += float(loss.value[0, 0])
        if grads is None:
            grads = g_part
        else:
            for k, v in g_part.items():
                grads[k] += v
    if train_config.grad_check:
        def loss_fn(p):
            return sum(float(batch_loss(bind(p), adj, part, model_config, train_config.l2 if first else 0.0,
                                        counts, dropout_rng(), reg, len(part) / n).value[0, 0])
                       for part, first in parts)
        finite_difference_check(loss_fn, params, grads, np.random.default_rng(step_seed), names=names)
    nc.adam_step(params, grads, state, names)
    return value


def _train_epoch(params, state, g, task, model_config, train_config, rng, minibatch, on_batch=None,
                 full_adj=None):
    kind = TASK_EDGES[task]
    n_edges = g.edges(kind).shape[0]
    if n_edges == 0:
        raise ContractError(f"no {kind} edges for task {task!r}")
    base = _propagation_base(g, model_config)
    if not minibatch and full_adj is None and model_config.propagates:
        full_adj = build_adjacency(g, model_config)
    order = rng.permutation(n_edges)
    size = train_config.batch_size if minibatch else n_edges
    losses, weights = [], []
    for start in range(0, n_edges, size):
        batch = sample_triplets(g, task, 0, rng, positives=order[start:start + size])
        if len(batch) == 0:
            continue
        if on_batch is not None:
            on_batch(batch)
        if not model_config.propagates:
            adj = None
        elif minibatch:
            adj = delete_edges(base, {kind: batch.deletable_edges}, model_config.adjacency_kind).adjacency
        else:
            adj = full_adj
        losses.append(_step(params, state, g, adj, batch, model_config, train_config, rng))
        weights.append(len(batch))
    if not losses:
        raise ContractError("epoch produced no usable triplets")
    return float(np.average(losses, weights=weights))


def train_epoch_minibatch(params, state, g, task, model_config, train_config, rng, on_batch=None) -> float:
    """``ceil(edges / batch_size)`` steps; each batch's positive edges are deleted before propagation.

    ``params`` is updated in place; returns the triplet-weighted mean loss.
    """
    return _train_epoch(params, state, g, task, model_config, train_config, rng, True, on_batch)


def train_epoch_fullbatch(params, state, g, task, model_config, train_config, rng, on_batch=None,
                          full_adj=None) -> float:
    """One step predicting every training edge, propagating on the full graph.

    The predicted edges stay in the graph, which is the leaky baseline.
    With ``batch_size >= edges`` this differs from
    :func:`train_epoch_minibatch` only by the deletion.
    """
    return _train_epoch(params, state, g, task, model_config, train_config, rng, False, on_batch, full_adj)


# ---------------------------------------------------------------- fit

def _phases(train_config: TrainConfig, model_config: ModelConfig):
    if not model_config.uses_items or train_config.schedule == "bundle-only":
        return [("bundle",)]
    if train_config.schedule == "pretrain":
        return [("item",), ("bundle",)]
    return [("item", "bundle")]


def _make_validator(validation, g, model_config, k):
    if validation is None:
        return None
    if callable(validation):
        return validation
    if len(validation) == 0:
        return None
    all_cold = np.ones(g.n_bundles, dtype=bool)

    def validate(params, tasks):
        # before the bundle head has trained, rank by the item term alone
        cold = all_cold if "bundle" not in tasks else "auto"
        rep = evaluate_ranking(params, g, model_config, validation, (k,), cold_start=cold)
        return rep.metrics[f"NDCG@{k}"]

    return validate


def fit(g: TripartiteGraph, train_config: TrainConfig, model_config: ModelConfig,
        validation: "RankingSet | None" = None, init=None, on_batch=None, on_epoch=None):
    """Train on ``g`` and return ``(best_params, TrainReport)``.

    ``validation`` is a :class:`RankingSet` scored with NDCG@``eval_k`` on
    ``g``, or a callable ``(params, tasks) -> float``.  Without it every phase
    runs ``max_epochs`` epochs.  ``init`` resumes from existing parameters.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(train_config.seed)
    counts = (g.n_users, g.n_items, g.n_bundles)
    params = init_params(model_config, counts, rng) if init is None else {k: v.copy() for k, v in init.items()}
    state = nc.AdamState(lr=train_config.lr)
    validator = _make_validator(validation, g, model_config, train_config.eval_k)
    if validator is None:
        warnings.warn("no validation data: training for a fixed number of epochs", stacklevel=2)
    full_adj = None
    if not train_config.minibatch and model_config.propagates:
        full_adj = build_adjacency(g, model_config)

    report = TrainReport()
    best_overall, best_params = -math.inf, copy.deepcopy(params)
    epoch = 0
    for tasks in _phases(train_config, model_config):
        phase_best, phase_params, since = -math.inf, None, 0
        for _ in range(train_config.max_epochs):
            epoch += 1
            losses = {}
            for task in tasks:
                if train_config.minibatch:
                    losses[task] = train_epoch_minibatch(params, state, g, task, model_config, train_config,
                                                         rng, on_batch)
                else:
                    losses[task] = train_epoch_fullbatch(params, state, g, task, model_config, train_config,
                                                         rng, on_batch, full_adj)
            val = float(validator(params, tasks)) if validator is not None else float("nan")
            rec = {"epoch": epoch, "task": "+".join(tasks), "loss": losses, "val": val, "k": train_config.eval_k}
            report.epochs.append(rec)
            log.info(report.log_lines()[-1])
            if on_epoch is not None:
                on_epoch(rec)
            if validator is None:
                phase_params = params
                continue
            if val > phase_best:
                phase_best, phase_params, since = val, copy.deepcopy(params), 0
                if val > best_overall:
                    best_overall, best_params = val, phase_params
                    report.best_epoch, report.best_metric = epoch, val
            else:
                since += 1
                if since >= train_config.patience:
                    break
        if phase_params is not None and phase_params is not params:
            params = copy.deepcopy(phase_params)
    report.stopped_epoch = epoch
    if validator is None:
        best_params = params
        report.best_epoch = epoch
    report.wall_clock = time.perf_counter() - t0
    return best_params, report

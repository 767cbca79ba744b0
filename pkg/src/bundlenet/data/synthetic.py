"""Planted-preference synthetic datasets.

Items cluster into themes around random centres, bundles draw their items
from one theme, and users pick items and bundles with probability rising in
latent affinity.  Each interaction is replaced by a uniform random one with
probability ``noise``, so ``noise=1.0`` makes interactions independent of
the latents.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from bundlenet.data.triples import DatasetBundle
from bundlenet.errors import ConfigError
from bundlenet.graph import build_graph


@dataclass(frozen=True)
class SyntheticSpec:
    n_users: int = 2000
    n_items: int = 300
    n_bundles: int = 150
    bundle_size_min: int = 2
    bundle_size_max: int = 5
    latent_dim: int = 8
    n_themes: int = 10
    # expected fraction of bundles / items each user interacts with
    ub_rate: float = 0.05
    ui_rate: float = 0.05
    noise: float = 0.1
    temperature: float = 0.1
    # std of a per-target log-popularity offset; gives long-tail degrees
    popularity: float = 0.0
    seed: int = 0

    def validate(self):
        for name in ("n_users", "n_items", "n_bundles", "latent_dim", "n_themes", "bundle_size_min"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.bundle_size_max < self.bundle_size_min:
            raise ConfigError("bundle_size_max < bundle_size_min")
        if self.bundle_size_max > self.n_items:
            raise ConfigError(f"bundle size {self.bundle_size_max} exceeds n_items {self.n_items}")
        for name in ("ub_rate", "ui_rate"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1]")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError("noise must lie in [0, 1]")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.popularity < 0:
            raise ConfigError("popularity must be non-negative")

    def to_dict(self):
        return asdict(self)


def _choose(rng, affinity, rate, noise, temperature, popularity=None):
    """Per-row weighted sampling without replacement, then noise replacement.

    Targets are drawn by Gumbel top-k on the softmax of standardized
    affinity; each pick is then swapped for a uniform random unused target
    with probability ``noise``.
    """
    n_rows, n_cols = affinity.shape
    std = affinity.std(axis=1, keepdims=True)
    logits = (affinity - affinity.mean(axis=1, keepdims=True)) / np.where(std > 0, std, 1.0) / temperature
    if popularity is not None:
        logits = logits + popularity[None, :]
    counts = np.maximum(1, rng.binomial(n_cols, rate, size=n_rows))
    keys = logits + rng.gumbel(size=logits.shape)
    order = np.argsort(-keys, axis=1, kind="stable")
    flips = rng.random(logits.shape) < noise
    spare = rng.random(logits.shape)
    rows, cols = [], []
    for r in range(n_rows):
        k = counts[r]
        picked = order[r, :k]
        n_flip = int(flips[r, :k].sum())
        if n_flip:
            kept = picked[~flips[r, :k]]
            free = np.setdiff1d(np.arange(n_cols), kept, assume_unique=True)
            pick = free[np.argsort(spare[r, :free.size], kind="stable")[:n_flip]]
            picked = np.concatenate([kept, pick])
        rows.append(np.full(picked.size, r))
        cols.append(np.sort(picked))
    return np.stack([np.concatenate(rows), np.concatenate(cols)], axis=1)


def generate_synthetic(spec: SyntheticSpec) -> DatasetBundle:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d, k = spec.latent_dim, spec.n_themes
    centres = rng.normal(size=(k, d))
    item_theme = rng.integers(k, size=spec.n_items)
    z_item = centres[item_theme] + 0.5 * rng.normal(size=(spec.n_items, d))

    bundle_items = []
    for _ in range(spec.n_bundles):
        theme = rng.integers(k)
        size = int(rng.integers(spec.bundle_size_min, spec.bundle_size_max + 1))
        pool = np.flatnonzero(item_theme == theme)
        if pool.size < size:
            pool = np.arange(spec.n_items)
        bundle_items.append(np.sort(rng.choice(pool, size=size, replace=False)))
    z_bundle = np.stack([z_item[b].mean(axis=0) for b in bundle_items])

    # each user leans towards one or two themes
    primary = rng.integers(k, size=spec.n_users)
    secondary = rng.integers(k, size=spec.n_users)
    mix = rng.uniform(0.0, 0.5, size=(spec.n_users, 1))
    z_user = (1 - mix) * centres[primary] + mix * centres[secondary] + 0.3 * rng.normal(size=(spec.n_users, d))

    # cosine affinity: preference is planted, popularity is not
    z_user, z_item, z_bundle = (z / np.linalg.norm(z, axis=1, keepdims=True) for z in (z_user, z_item, z_bundle))
    pop_item = spec.popularity * rng.normal(size=spec.n_items)
    pop_bundle = spec.popularity * rng.normal(size=spec.n_bundles)
    ui = _choose(rng, z_user @ z_item.T, spec.ui_rate, spec.noise, spec.temperature, pop_item)
    ub = _choose(rng, z_user @ z_bundle.T, spec.ub_rate, spec.noise, spec.temperature, pop_bundle)
    bi = np.concatenate([np.stack([np.full(b.size, j), b], 1) for j, b in enumerate(bundle_items)])

    g = build_graph(ub, ui, bi, (spec.n_users, spec.n_items, spec.n_bundles))
    ids = {"user": np.arange(spec.n_users), "item": np.arange(spec.n_items), "bundle": np.arange(spec.n_bundles)}
    extras = {"z_user": z_user, "z_item": z_item, "z_bundle": z_bundle}
    return DatasetBundle(g, ids, "synthetic", f"synthetic-{spec.seed}", extras)

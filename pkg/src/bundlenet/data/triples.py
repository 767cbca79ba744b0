"""Tab-separated interaction files and dataset statistics."""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bundlenet.errors import LoadError
from bundlenet.graph import TripartiteGraph, build_graph

FILES = {"ub": "user_bundle.tsv", "ui": "user_item.tsv", "bi": "bundle_item.tsv"}


@dataclass
class DatasetBundle:
    """A re-indexed dataset: the graph plus internal-to-original id maps."""

    graph: TripartiteGraph
    id_maps: dict  # side -> array, internal index -> original id
    provenance: str = "steam-format"
    name: str = "dataset"
    extras: dict = field(default_factory=dict)

    def original_edges(self, kind: str) -> np.ndarray:
        left, right = {"ub": ("user", "bundle"), "ui": ("user", "item"), "bi": ("bundle", "item")}[kind]
        e = self.graph.edges(kind)
        return np.stack([self.id_maps[left][e[:, 0]], self.id_maps[right][e[:, 1]]], axis=1)

    def stats(self) -> dict:
        return dataset_stats(self.graph)

    def stats_table(self) -> str:
        return format_stats_table({self.name: self.stats()})


def _parse_file(path: Path) -> np.ndarray:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.rstrip("\r\n")
            if not s.strip():
                continue
            parts = s.split("\t")
            if len(parts) != 2:
                raise LoadError(f"{path}:{lineno}: expected two tab-separated ids, got {s!r}")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError:
                raise LoadError(f"{path}:{lineno}: ids must be decimal integers, got {s!r}") from None
            if a < 0 or b < 0:
                raise LoadError(f"{path}:{lineno}: negative id in {s!r}")
            pairs.append((a, b))
    if not pairs:
        warnings.warn(f"{path} is empty; relation left without edges", stacklevel=3)
        return np.zeros((0, 2), dtype=np.int64)
    return np.asarray(pairs, dtype=np.int64)


def _resolve(paths) -> dict:
    if isinstance(paths, (str, os.PathLike)):
        root = Path(paths)
        return {k: root / v for k, v in FILES.items()}
    return {k: Path(paths[k]) for k in FILES}


def load_triples(paths, name: str | None = None) -> DatasetBundle:
    """Read the three edge files and densely re-index every id space.

    ``paths`` is a directory holding ``user_bundle.tsv``, ``user_item.tsv``
    and ``bundle_item.tsv``, or a mapping ``{"ub": ..., "ui": ..., "bi": ...}``.
    Original ids are sorted ascending before re-indexing.
    """
    files = _resolve(paths)
    for p in files.values():
        if not p.is_file():
            raise LoadError(f"missing interaction file {p}")
    raw = {k: _parse_file(p) for k, p in files.items()}
    users = np.unique(np.concatenate([raw["ub"][:, 0], raw["ui"][:, 0]]))
    items = np.unique(np.concatenate([raw["ui"][:, 1], raw["bi"][:, 1]]))
    bundles = np.unique(np.concatenate([raw["ub"][:, 1], raw["bi"][:, 0]]))
    ub = np.stack([np.searchsorted(users, raw["ub"][:, 0]), np.searchsorted(bundles, raw["ub"][:, 1])], 1)
    ui = np.stack([np.searchsorted(users, raw["ui"][:, 0]), np.searchsorted(items, raw["ui"][:, 1])], 1)
    bi = np.stack([np.searchsorted(bundles, raw["bi"][:, 0]), np.searchsorted(items, raw["bi"][:, 1])], 1)
    g = build_graph(ub, ui, bi, (users.size, items.size, bundles.size))
    check_bundles(g)
    label = name or (Path(paths).name if isinstance(paths, (str, os.PathLike)) else "dataset")
    return DatasetBundle(g, {"user": users, "item": items, "bundle": bundles}, "steam-format", label)


def check_bundles(g: TripartiteGraph) -> None:
    """Warn about bundles without items or with a single item."""
    size = np.bincount(g.edges_bi[:, 0], minlength=g.n_bundles)
    used = g.degree("ub", "bundle") > 0
    missing = int(np.count_nonzero(used & (size == 0)))
    if missing:
        warnings.warn(f"{missing} interacted bundle(s) have no bundle-item edges", stacklevel=3)
    single = int(np.count_nonzero(size == 1))
    if single:
        warnings.warn(f"{single} bundle(s) contain a single item", stacklevel=3)


def write_triples(dataset: DatasetBundle, directory) -> dict:
    """Write the three TSV files using original ids; returns the paths."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    out = {}
    for kind, fname in FILES.items():
        e = dataset.original_edges(kind)
        text = "".join(f"{a}\t{b}\n" for a, b in e.tolist())
        path = root / fname
        path.write_text(text, encoding="utf-8")
        out[kind] = path
    return out


def dataset_stats(g: TripartiteGraph) -> dict:
    n_u, n_i, n_b = g.n_users, g.n_items, g.n_bundles

    def density(edges, a, b):
        return edges / (a * b) if a and b else 0.0

    ub, ui, bi = (g.edges(k).shape[0] for k in ("ub", "ui", "bi"))
    return {
        "users": n_u, "bundles": n_b, "items": n_i,
        "user_bundle": ub, "user_bundle_density": density(ub, n_u, n_b),
        "user_item": ui, "user_item_density": density(ui, n_u, n_i),
        "bundle_item": bi, "bundle_item_density": density(bi, n_b, n_i),
    }


def format_stats_table(rows: dict) -> str:
    """Per-dataset counts and densities in the usual summary layout."""
    head = ("Datasets", "# users", "# bundles", "# items",
            "# user-bundle (density)", "# user-item (density)", "# bundle-item (density)")
    lines = []
    for name, s in rows.items():
        lines.append((
            name, f"{s['users']:,}", f"{s['bundles']:,}", f"{s['items']:,}",
            f"{s['user_bundle']:,} ({100 * s['user_bundle_density']:.2f}%)",
            f"{s['user_item']:,} ({100 * s['user_item_density']:.2f}%)",
            f"{s['bundle_item']:,} ({100 * s['bundle_item_density']:.2f}%)",
        ))
    widths = [max(len(str(r[c])) for r in [head] + lines) for c in range(len(head))]
    fmt = lambda r: "  ".join(str(v).ljust(w) if c == 0 else str(v).rjust(w) for c, (v, w) in enumerate(zip(r, widths)))
    return "\n".join([fmt(head)] + [fmt(r) for r in lines]) + "\n"

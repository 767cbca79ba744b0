"""BNET1 checkpoints and JSON split files.

A checkpoint is::

    BNET1\\n
    key=value\\n            (model config and metadata, one per line)
    \\n
    array <name> <rows> <cols>\\n
    <rows*cols little-endian float64>
    ...
    END\\n
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from bundlenet.errors import FormatError
from bundlenet.evaluation import EvalSplit, RankingSet
from bundlenet.graph import TripartiteGraph
from bundlenet.model import ModelConfig

MAGIC = b"BNET1\n"
SPLIT_FORMAT = "bundlenet-split/1"


def checkpoint_bytes(params: dict, config: ModelConfig, meta: dict | None = None) -> bytes:
    header = {f"config.{k}": v for k, v in config.to_dict().items()}
    for k, v in (meta or {}).items():
        header[f"meta.{k}"] = v
    parts = [MAGIC]
    for k in sorted(header):
        v = header[k]
        if "\n" in str(k) or "\n" in str(v) or "=" in str(k):
            raise FormatError(f"header entry {k!r} cannot be encoded")
        parts.append(f"{k}={v}\n".encode("utf-8"))
    parts.append(b"\n")
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        if arr.ndim != 2 or " " in name:
            raise FormatError(f"cannot store parameter {name!r} with shape {arr.shape}")
        parts.append(f"array {name} {arr.shape[0]} {arr.shape[1]}\n".encode("utf-8"))
        parts.append(np.ascontiguousarray(arr).tobytes())
    parts.append(b"END\n")
    return b"".join(parts)


def save_checkpoint(path, params: dict, config: ModelConfig, meta: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, config, meta))


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text in ("True", "False"):
        return text == "True"
    return text


def parse_checkpoint(blob: bytes):
    if not blob.startswith(MAGIC):
        raise FormatError("not a BNET1 checkpoint (bad magic)")
    pos = len(MAGIC)
    header = {}
    while True:
        end = blob.find(b"\n", pos)
        if end < 0:
            raise FormatError("truncated checkpoint header")
        line = blob[pos:end].decode("utf-8")
        pos = end + 1
        if not line:
            break
        if "=" not in line:
            raise FormatError(f"malformed header line {line!r}")
        k, v = line.split("=", 1)
        header[k] = v
    params = {}
    while True:
        end = blob.find(b"\n", pos)
        if end < 0:
            raise FormatError("truncated checkpoint: missing END marker")
        line = blob[pos:end].decode("utf-8", errors="replace")
        pos = end + 1
        if line == "END":
            break
        fields = line.split(" ")
        if len(fields) != 4 or fields[0] != "array":
            raise FormatError(f"malformed array record {line!r}")
        try:
            rows, cols = int(fields[2]), int(fields[3])
        except ValueError:
            raise FormatError(f"malformed array shape in {line!r}") from None
        nbytes = rows * cols * 8
        if pos + nbytes > len(blob):
            raise FormatError(f"truncated data for array {fields[1]!r}")
        params[fields[1]] = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).astype(np.float64)
        pos += nbytes
    if pos != len(blob):
        raise FormatError("trailing bytes after END marker")
    config = {k[len("config."):]: _parse_value(v) for k, v in header.items() if k.startswith("config.")}
    meta = {k[len("meta."):]: _parse_value(v) for k, v in header.items() if k.startswith("meta.")}
    try:
        model_config = ModelConfig.from_dict(config)
    except Exception as exc:
        raise FormatError(f"bad model config in checkpoint: {exc}") from exc
    return params, model_config, meta


def load_checkpoint(path):
    """Return ``(params, model_config, meta)``."""
    return parse_checkpoint(Path(path).read_bytes())


# ---------------------------------------------------------------- splits

def _ranking_to_json(r: RankingSet) -> dict:
    return {"users": r.users.tolist(), "positives": r.positives.tolist(),
            "negatives": [np.asarray(n).tolist() for n in r.negatives]}


def _ranking_from_json(d: dict) -> RankingSet:
    return RankingSet(np.asarray(d["users"], dtype=np.int64), np.asarray(d["positives"], dtype=np.int64),
                      [np.asarray(n, dtype=np.int64) for n in d["negatives"]])


def split_to_json(split: EvalSplit, full_graph: TripartiteGraph) -> str:
    doc = {
        "format": SPLIT_FORMAT,
        "counts": [full_graph.n_users, full_graph.n_items, full_graph.n_bundles],
        "n_negatives": split.n_negatives,
        "test": _ranking_to_json(split.test),
        "validation": _ranking_to_json(split.validation),
        "singleton_users": split.singleton_users.tolist(),
        "shortfall_users": split.shortfall_users.tolist(),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save_split(path, split: EvalSplit, full_graph: TripartiteGraph) -> None:
    Path(path).write_text(split_to_json(split, full_graph), encoding="utf-8")


def load_split(path, full_graph: TripartiteGraph) -> EvalSplit:
    """Read a split and rebuild its training graph from ``full_graph``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read split file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != SPLIT_FORMAT:
        raise FormatError(f"{path} is not a {SPLIT_FORMAT} file")
    counts = [full_graph.n_users, full_graph.n_items, full_graph.n_bundles]
    if doc["counts"] != counts:
        raise FormatError(f"split was made for counts {doc['counts']}, dataset has {counts}")
    test, val = _ranking_from_json(doc["test"]), _ranking_from_json(doc["validation"])
    held = np.concatenate([np.stack([test.users, test.positives], 1).reshape(-1, 2),
                           np.stack([val.users, val.positives], 1).reshape(-1, 2)])
    try:
        train = full_graph.without(ub=held)
    except Exception as exc:
        raise FormatError(f"split does not match dataset: {exc}") from exc
    return EvalSplit(train, test, val, np.asarray(doc["singleton_users"], dtype=np.int64),
                     np.asarray(doc["shortfall_users"], dtype=np.int64), int(doc["n_negatives"]))

"""Command-line entry point: generate, train, evaluate, ablate, serve-precompute.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command writes plain-text and JSON outputs under ``--out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from bundlenet import config as cfgmod
from bundlenet.data import (
    format_stats_table,
    generate_synthetic,
    load_checkpoint,
    load_split,
    load_triples,
    save_checkpoint,
    save_split,
    write_triples,
)
from bundlenet.errors import BundleNetError, ConfigError
from bundlenet.evaluation import evaluate, make_split
from bundlenet.model import VARIANTS, bundle_scores, representations
from bundlenet.training import SCHEDULES, fit

log = logging.getLogger("bundlenet")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
COMMANDS = ("generate", "train", "evaluate", "ablate", "serve-precompute")


class UsageError(Exception):
    """Bad invocation; reported with the usage text and exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    common.add_argument("--seed", type=str, metavar="N")
    common.add_argument("--variant", choices=VARIANTS)
    common.add_argument("--minibatch", choices=("true", "false"))
    common.add_argument("--schedule", choices=SCHEDULES)
    common.add_argument("--k", metavar="LIST", help="comma-separated cutoffs, e.g. 5,10")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--data", metavar="DIR", help="directory with the three TSV files")
    common.add_argument("--split", metavar="PATH", help="split file written by train")
    common.add_argument("--checkpoint", metavar="PATH")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true", help="log each epoch to stderr")

    parser = _Parser(prog="bundlenet", description="Bundle recommendation on a user-item-bundle graph.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {
        "generate": "write a synthetic planted-preference dataset",
        "train": "train a model and write its checkpoint, split and report",
        "evaluate": "leave-one-out ranking metrics for a checkpoint",
        "ablate": "train the relational / multi-task / mini-batch toggle grid",
        "serve-precompute": "write every user's top-K bundles",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], description=helps[name])
    return parser


def _overrides(args) -> dict:
    out = {}
    for key in ("seed", "variant", "schedule", "k", "out", "data", "split", "checkpoint", "minibatch"):
        value = getattr(args, key)
        if value is not None:
            out[key] = value
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value
    return out


# ---------------------------------------------------------------- helpers

def _require(cfg, key, usage):
    if cfg.get(key) is None:
        raise UsageError(f"{usage}missing required setting {key!r} (flag --{key} or config key)")
    return cfg[key]


def _load_dataset(cfg, usage):
    path = _require(cfg, "data", usage)
    if not Path(path).is_dir():
        raise UsageError(f"{usage}dataset directory {path!r} does not exist")
    return load_triples(path)


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _split_for(cfg, dataset, out: Path | None):
    """The configured split file, or a fresh seeded split (saved into ``out``)."""
    if cfg["split"] is not None:
        return load_split(cfg["split"], dataset.graph)
    split = make_split(dataset.graph, np.random.default_rng(cfg["seed"]), cfg["n_negatives"],
                       cfg["val_fraction"])
    if out is not None:
        save_split(out / "split.json", split, dataset.graph)
    return split


def _checkpoint_split(cfg, dataset):
    if cfg["split"] is None:
        sibling = Path(cfg["checkpoint"]).with_name("split.json")
        if not sibling.exists():
            raise UsageError(f"no --split given and {sibling} does not exist")
        cfg = dict(cfg, split=str(sibling))
    return load_split(cfg["split"], dataset.graph)


def _train_one(split, model_config, train_config):
    return fit(split.train_graph, train_config, model_config, split.validation)


# ---------------------------------------------------------------- commands

def cmd_generate(cfg, usage) -> int:
    out = _out_dir(cfg)
    spec = cfgmod.synthetic_spec(cfg)
    ds = generate_synthetic(spec)
    write_triples(ds, out)
    stats = ds.stats()
    _dump_json(out / "dataset.json", {"name": ds.name, "spec": spec.to_dict(), "stats": stats})
    table = format_stats_table({ds.name: stats})
    (out / "dataset.txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK


def cmd_train(cfg, usage) -> int:
    dataset = _load_dataset(cfg, usage)
    out = _out_dir(cfg)
    mc, tc = cfgmod.model_config(cfg), cfgmod.train_config(cfg)
    split = _split_for(cfg, dataset, out)
    params, report = _train_one(split, mc, tc)
    meta = {"seed": tc.seed, "best_epoch": report.best_epoch, "best_val_ndcg": report.best_metric,
            "schedule": tc.schedule, "minibatch": tc.minibatch}
    save_checkpoint(out / "model.bnet", params, mc, meta)
    (out / "config.txt").write_text(cfgmod.format_config(cfg), encoding="utf-8")
    _dump_json(out / "train_report.json", report.to_dict())
    log_text = "\n".join(report.log_lines()) + "\n"
    (out / "train_log.txt").write_text(log_text, encoding="utf-8")
    sys.stdout.write(f"best epoch {report.best_epoch} (val NDCG@{tc.eval_k} {report.best_metric:.4f}); "
                     f"checkpoint {out / 'model.bnet'}\n")
    return EXIT_OK


def cmd_evaluate(cfg, usage) -> int:
    _require(cfg, "checkpoint", usage)
    dataset = _load_dataset(cfg, usage)
    params, mc, _ = load_checkpoint(cfg["checkpoint"])
    split = _checkpoint_split(cfg, dataset)
    report = evaluate(params, split, mc, cfg["k"])
    out = _out_dir(cfg)
    doc = dict(report.to_dict(), variant=mc.variant, ks=list(report.ks))
    _dump_json(out / "eval_report.json", doc)
    text = report.to_text(mc.variant)
    (out / "eval_report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def ablation_combos(subset: str) -> list[tuple]:
    """Toggle combinations as sorted axis tuples; ``"all"`` is the full 2^3 grid."""
    if subset == "all":
        combos = []
        for mask in range(8):
            combos.append(tuple(a for i, a in enumerate(cfgmod.ABLATION_AXES) if mask >> (2 - i) & 1))
        return sorted(combos, key=lambda c: (-len(c), c))
    return [tuple(c.split("+")) if c != "none" else () for c in subset.split(",")]


def ablation_configs(cfg, combo):
    """Model and train configs for one toggle combination.

    REL on is the relational model, off the shared-weight tripartite GCN.
    MTL on keeps the configured multi-task schedule (pretrain if it was
    bundle-only), off trains bundle triplets only.  MBT toggles mini-batch
    edge deletion.
    """
    mc, tc = cfgmod.model_config(cfg), cfgmod.train_config(cfg)
    mc = replace(mc, variant="bundlenet" if "rel" in combo else "gcn-tri")
    multi = tc.schedule if tc.schedule != "bundle-only" else "pretrain"
    tc = replace(tc, schedule=multi if "mtl" in combo else "bundle-only", minibatch="mbt" in combo)
    return mc, tc


def cmd_ablate(cfg, usage) -> int:
    dataset = _load_dataset(cfg, usage)
    out = _out_dir(cfg)
    split = _split_for(cfg, dataset, out)
    rows = []
    for combo in ablation_combos(cfg["ablate.subset"]):
        mc, tc = ablation_configs(cfg, combo)
        params, report = _train_one(split, mc, tc)
        metrics = evaluate(params, split, mc, cfg["k"]).metrics
        rows.append({"toggles": {a: a in combo for a in cfgmod.ABLATION_AXES}, "variant": mc.variant,
                     "schedule": tc.schedule, "minibatch": tc.minibatch, "best_epoch": report.best_epoch,
                     "metrics": {k: metrics[k] for k in sorted(metrics)}})
    _dump_json(out / "ablation.json", {"rows": rows, "ks": list(cfg["k"])})
    cols = [f"{m}@{k}" for k in cfg["k"] for m in ("Recall", "MRR", "NDCG")]
    lines = ["REL MTL MBT" + "".join(f"{c:>11}" for c in cols)]
    for r in rows:
        flags = " ".join(f"{'on' if r['toggles'][a] else 'off':>3}" for a in cfgmod.ABLATION_AXES)
        lines.append(flags + "".join(f"{r['metrics'][c]:>11.4f}" for c in cols))
    text = "\n".join(lines) + "\n"
    (out / "ablation.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def top_k(scores: np.ndarray, k: int, deficit: np.ndarray | None = None) -> np.ndarray:
    """Indices of the ``k`` best scores, descending, ties by ascending index.

    With ``deficit`` (``max - score`` at full precision) the order follows
    the deficit ascending, which separates scores that round to equal.
    """
    k = min(k, scores.size)
    key = -scores if deficit is None else deficit
    return np.lexsort((np.arange(scores.size), key))[:k]


def cmd_serve_precompute(cfg, usage) -> int:
    _require(cfg, "checkpoint", usage)
    dataset = _load_dataset(cfg, usage)
    params, mc, _ = load_checkpoint(cfg["checkpoint"])
    split = _checkpoint_split(cfg, dataset)
    g = split.train_graph
    k = max(cfg["k"])
    reps = None if not mc.propagates else representations(params, g, mc)
    users = np.arange(g.n_users)
    uid, bid = dataset.id_maps["user"], dataset.id_maps["bundle"]
    out = _out_dir(cfg)
    n_cold = int(np.count_nonzero(g.degree("ub", "bundle") == 0))
    chunk = 512
    with open(out / "topk.tsv", "w", encoding="utf-8") as fh:
        fh.write("user\trank\tbundle\tscore\n")
        for start in range(0, users.size, chunk):
            part = users[start:start + chunk]
            scores = bundle_scores(params, reps, g, mc, part, cold_start="auto")
            deficit = bundle_scores(params, reps, g, mc, part, cold_start="auto", deficit=True)
            for row, u in enumerate(part):
                for rank, b in enumerate(top_k(scores[row], k, deficit[row]), 1):
                    fh.write(f"{uid[u]}\t{rank}\t{bid[b]}\t{_fmt(scores[row, b])}\n")
    summary = {"users": int(users.size), "k": k, "cold_start_bundles": n_cold, "variant": mc.variant}
    _dump_json(out / "topk_summary.json", summary)
    sys.stdout.write(f"wrote top-{k} bundles for {users.size} users to {out / 'topk.tsv'} "
                     f"({n_cold} cold-start bundles)\n")
    return EXIT_OK


HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "serve-precompute": cmd_serve_precompute,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "bundlenet: error: a command is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = cfgmod.resolve(args.config, _overrides(args))
        usage = parser._subparsers._group_actions[0].choices[args.command].format_usage()
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return HANDLERS[args.command](cfg, usage)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except ConfigError as exc:
        sys.stderr.write(f"bundlenet: config error: {exc}\n")
        return EXIT_USAGE
    except (BundleNetError, OSError) as exc:
        sys.stderr.write(f"bundlenet: error: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

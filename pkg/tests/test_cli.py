import json

import numpy as np
import pytest

from bundlenet import cli, training
from bundlenet import config as cfgmod
from bundlenet.data import load_checkpoint, load_split, load_triples, save_checkpoint
from bundlenet.errors import ConfigError
from bundlenet.model import ModelConfig, bundle_scores, representations

TINY = ["--set", "synthetic.n_users=120", "--set", "synthetic.n_items=40", "--set", "synthetic.n_bundles=25"]
FAST = ["--set", "embed_dim=4", "--set", "hidden0=4", "--set", "hidden1=4", "--set", "max_epochs=2"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert cli.main(["generate", "--out", str(out), "--seed", "1"] + TINY) == 0
    return out


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["train", "--data", str(data_dir), "--out", str(out), "--seed", "2"] + FAST) == 0
    return out


def test_generate_outputs(data_dir):
    for name in ("user_bundle.tsv", "user_item.tsv", "bundle_item.tsv", "dataset.json", "dataset.txt"):
        assert (data_dir / name).is_file()
    doc = json.loads((data_dir / "dataset.json").read_text())
    assert doc["stats"]["users"] == 120 and doc["spec"]["seed"] == 1


def test_train_outputs(trained):
    for name in ("model.bnet", "split.json", "config.txt", "train_report.json", "train_log.txt"):
        assert (trained / name).is_file()
    _, mc, meta = load_checkpoint(trained / "model.bnet")
    assert mc.embed_dim == 4 and meta["seed"] == 2
    assert "val_ndcg@5" in (trained / "train_log.txt").read_text()


@pytest.mark.parametrize("argv", [
    [],
    ["fly"],
    ["train"],
    ["train", "--variant", "lightgcn"],
    ["train", "--minibatch", "maybe"],
    ["train", "--set", "colour=red"],
    ["train", "--set", "lr"],
    ["train", "--seed", "x"],
    ["generate", "--set", "synthetic.noise=2"],
])
def test_usage_errors_exit_two(argv, tmp_path, capsys):
    assert cli.main(argv + ["--out", str(tmp_path)] if argv else argv) == 2
    assert capsys.readouterr().err


def test_missing_dataset_exits_two(tmp_path, capsys):
    assert cli.main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2
    assert "usage" in capsys.readouterr().err


def test_runtime_error_exits_one(data_dir, tmp_path):
    bad = tmp_path / "model.bnet"
    bad.write_bytes(b"junk")
    (tmp_path / "split.json").write_text("{}")
    assert cli.main(["evaluate", "--data", str(data_dir), "--checkpoint", str(bad), "--out", str(tmp_path)]) == 1


def test_config_file_and_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nlr = 0.01\nseed = 3\nk = 5,10  # trailing\nminibatch = false\n")
    cfg = cfgmod.resolve(path, {"seed": "5"})
    assert cfg["lr"] == 0.01 and cfg["seed"] == 5 and cfg["k"] == (5, 10) and cfg["minibatch"] is False
    assert cfgmod.resolve(None, {})["lr"] == cfgmod.defaults()["lr"]
    assert cfgmod.resolve(path, {})["seed"] == 3
    again = tmp_path / "again.cfg"
    again.write_text(cfgmod.format_config(cfg))
    assert cfgmod.resolve(again, {}) == cfg


@pytest.mark.parametrize("text,where", [
    ("colour = red\n", ":1"),
    ("lr = 0.1\nlr = 0.2\n", ":2"),
    ("lr 0.1\n", ":1"),
    ("batch_size = big\n", ":1"),
    ("variant = lightgcn\n", ":1"),
])
def test_config_file_errors(tmp_path, text, where):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError, match=where):
        cfgmod.read_config_file(path)
    assert cli.main(["generate", "--config", str(path), "--out", str(tmp_path)]) == 2


def test_cli_flag_beats_file(data_dir, tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 3\nvariant = gcn-bi\nmax_epochs = 1\nembed_dim = 4\nhidden0 = 4\nhidden1 = 4\n")
    assert cli.main(["train", "--config", str(path), "--data", str(data_dir), "--out", str(tmp_path),
                     "--variant", "bpr-mf"]) == 0
    _, mc, meta = load_checkpoint(tmp_path / "model.bnet")
    assert mc.variant == "bpr-mf" and meta["seed"] == 3


def test_train_is_byte_deterministic(data_dir, tmp_path):
    argv = ["train", "--data", str(data_dir), "--out", str(tmp_path), "--seed", "4"] + FAST
    names = ("model.bnet", "split.json", "config.txt", "train_report.json", "train_log.txt")
    assert cli.main(argv) == 0
    first = {n: (tmp_path / n).read_bytes() for n in names}
    assert cli.main(argv) == 0
    assert all((tmp_path / n).read_bytes() == first[n] for n in names)


def test_evaluate_and_serve_deterministic(data_dir, trained, tmp_path):
    for cmd, names in (("evaluate", ("eval_report.json", "eval_report.txt")),
                       ("serve-precompute", ("topk.tsv", "topk_summary.json"))):
        argv = [cmd, "--data", str(data_dir), "--checkpoint", str(trained / "model.bnet"), "--out", str(tmp_path),
                "--k", "5,10"]
        assert cli.main(argv) == 0
        first = {n: (tmp_path / n).read_bytes() for n in names}
        assert cli.main(argv) == 0
        assert all((tmp_path / n).read_bytes() == first[n] for n in names)
    doc = json.loads((tmp_path / "eval_report.json").read_text())
    assert set(doc["metrics"]) == {f"{m}@{k}" for m in ("Recall", "MRR", "NDCG") for k in (5, 10)}


def _oracle_dir(data_dir, trained, tmp_path, which):
    """bpr-mf checkpoint scoring 1 on one chosen bundle per user, 0 elsewhere."""
    ds = load_triples(data_dir)
    split = load_split(trained / "split.json", ds.graph)
    g = split.train_graph
    e = np.zeros((g.n_nodes, g.n_bundles))
    if which == "test":
        e[split.test.users, split.test.positives] = 1.0
    else:
        for u in range(g.n_users):
            nb = g.neighbors("ub", u)
            if nb.size:
                e[u, nb[0]] = 1.0
    off = g.n_users + g.n_items
    e[off:] = np.eye(g.n_bundles)
    save_checkpoint(tmp_path / "model.bnet", {"embedding": e}, ModelConfig(variant="bpr-mf"))
    (tmp_path / "split.json").write_bytes((trained / "split.json").read_bytes())
    return ds, split


def test_oracle_checkpoint_scores_one(data_dir, trained, tmp_path):
    _oracle_dir(data_dir, trained, tmp_path, "test")
    assert cli.main(["evaluate", "--data", str(data_dir), "--checkpoint", str(tmp_path / "model.bnet"),
                     "--out", str(tmp_path)]) == 0
    metrics = json.loads((tmp_path / "eval_report.json").read_text())["metrics"]
    assert metrics == {"Recall@5": 1.0, "MRR@5": 1.0, "NDCG@5": 1.0}


def _read_topk(path):
    rows = [line.split("\t") for line in path.read_text().splitlines()[1:]]
    return [(int(u), int(r), int(b), float(s)) for u, r, b, s in rows]


def test_serve_top1_is_dominant_bundle(data_dir, trained, tmp_path):
    ds, split = _oracle_dir(data_dir, trained, tmp_path, "train")
    assert cli.main(["serve-precompute", "--data", str(data_dir), "--checkpoint", str(tmp_path / "model.bnet"),
                     "--out", str(tmp_path), "--k", "1"]) == 0
    g = split.train_graph
    rows = _read_topk(tmp_path / "topk.tsv")
    assert len(rows) == g.n_users
    ids = ds.id_maps
    for u, rank, b, score in rows:
        ui = int(np.searchsorted(ids["user"], u))
        nb = g.neighbors("ub", ui)
        if nb.size:
            assert rank == 1 and b == ids["bundle"][nb[0]] and score == 1.0


def test_serve_rows_sorted_with_id_ties(data_dir, trained, tmp_path):
    assert cli.main(["serve-precompute", "--data", str(data_dir), "--checkpoint", str(trained / "model.bnet"),
                     "--out", str(tmp_path), "--k", "25"]) == 0
    rows = _read_topk(tmp_path / "topk.tsv")
    by_user = {}
    for u, r, b, s in rows:
        by_user.setdefault(u, []).append((r, b, s))
    for entries in by_user.values():
        assert [r for r, _, _ in entries] == list(range(1, len(entries) + 1))
        for (_, b1, s1), (_, b2, s2) in zip(entries, entries[1:]):
            assert s1 >= s2
            if s1 == s2:
                assert b1 < b2


def test_top_k_ties():
    s = np.array([0.5, 0.9, 0.5, 0.9, 0.1])
    assert cli.top_k(s, 4).tolist() == [1, 3, 0, 2]
    assert cli.top_k(s, 10).tolist() == [1, 3, 0, 2, 4]


def test_serve_scores_cold_bundle(data_dir, tmp_path):
    # add a bundle that nobody bought
    data = tmp_path / "data"
    data.mkdir()
    for name in ("user_bundle.tsv", "user_item.tsv"):
        (data / name).write_bytes((data_dir / name).read_bytes())
    (data / "bundle_item.tsv").write_text((data_dir / "bundle_item.tsv").read_text() + "9999\t0\n9999\t1\n")
    run = tmp_path / "run"
    assert cli.main(["train", "--data", str(data), "--out", str(run)] + FAST) == 0
    assert cli.main(["serve-precompute", "--data", str(data), "--checkpoint", str(run / "model.bnet"),
                     "--out", str(run), "--k", "26"]) == 0
    assert json.loads((run / "topk_summary.json").read_text())["cold_start_bundles"] >= 1
    rows = [r for r in _read_topk(run / "topk.tsv") if r[2] == 9999]
    assert len(rows) == 120
    ds = load_triples(data)
    params, mc, _ = load_checkpoint(run / "model.bnet")
    split = load_split(run / "split.json", ds.graph)
    g = split.train_graph
    b = int(np.searchsorted(ds.id_maps["bundle"], 9999))
    reps = representations(params, g, mc)
    user0 = int(np.searchsorted(ds.id_maps["user"], rows[0][0]))
    item_only = bundle_scores(params, reps, g, mc, [user0], cold_start=np.eye(g.n_bundles, dtype=bool)[b])
    assert rows[0][3] == item_only[0, b]


def test_ablate_subset_and_mtl_off(data_dir, tmp_path, monkeypatch):
    tasks = []
    real = training.sample_triplets

    def spy(g, task, *a, **k):
        tasks.append(task)
        return real(g, task, *a, **k)

    monkeypatch.setattr(training, "sample_triplets", spy)
    assert cli.main(["ablate", "--data", str(data_dir), "--out", str(tmp_path),
                     "--set", "ablate.subset=rel+mbt"] + FAST) == 0
    assert tasks and set(tasks) == {"bundle"}
    doc = json.loads((tmp_path / "ablation.json").read_text())
    assert len(doc["rows"]) == 1
    row = doc["rows"][0]
    assert row["toggles"] == {"rel": True, "mtl": False, "mbt": True}
    assert row["variant"] == "bundlenet" and row["schedule"] == "bundle-only" and row["minibatch"] is True
    assert "REL MTL MBT" in (tmp_path / "ablation.txt").read_text()


def test_ablation_grid_mapping():
    combos = cli.ablation_combos("all")
    assert len(combos) == 8 and combos[0] == ("rel", "mtl", "mbt") and combos[-1] == ()
    cfg = cfgmod.defaults()
    mc, tc = cli.ablation_configs(cfg, ("mtl",))
    assert mc.variant == "gcn-tri" and tc.schedule == "pretrain" and tc.minibatch is False
    mc, tc = cli.ablation_configs(cfg, ("rel", "mtl", "mbt"))
    assert mc.variant == "bundlenet" and tc.minibatch is True

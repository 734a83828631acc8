from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from synth import make_corpus, make_tree_thesaurus

from meshkit import cli
from meshkit import thesaurus as ts
from meshkit.embed_io import EmbeddingTable, read_emb, write_emb


def write_thesaurus_file(th, path: Path) -> str:
    lines = []
    for desc_id in th.ids():
        d = th.get(desc_id)
        tns = ";".join(str(t) for t in sorted(d.tree_numbers))
        lines.append(f"{d.id}\t{d.label}\t{d.description}\t{tns}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def write_corpus_file(corpus, path: Path) -> str:
    lines = [f"{d.doc_id}\t{d.abstract}\t{';'.join(d.labels)}" for d in corpus]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    th = make_tree_thesaurus(seed=91, n_nodes=40, roots=("C01", "D01"), multi_tn=4)
    corpus = make_corpus(th, seed=92, n_docs=80, labels_per_doc=(1, 2))
    th_path = write_thesaurus_file(th, root / "thesaurus.tsv")
    corpus_path = write_corpus_file(corpus, root / "corpus.tsv")
    return root, th, corpus, th_path, corpus_path


def test_thesaurus_stats(workspace):
    root, th, _corpus, th_path, _ = workspace
    out = str(root / "stats.json")
    assert cli.run(["thesaurus", "stats", "--input", th_path, "--out", out]) == 0
    stats = json.loads(Path(out).read_text())
    assert stats["descriptors"] == len(th)
    assert stats["vocab_size"] == 1130
    manifest = json.loads(Path(out + ".manifest.json").read_text())
    assert manifest["command"] == "thesaurus stats"
    assert th_path in manifest["inputs"]


def test_pairs_gen_deterministic(workspace):
    root, _th, _corpus, th_path, corpus_path = workspace
    out = str(root / "pairs.tsv")
    argv = [
        "pairs", "gen", "--thesaurus", th_path, "--corpus", corpus_path,
        "--config", "balanced", "--seed", "7", "--holdout", "3", "--out", out,
    ]
    assert cli.run(argv) == 0
    first = Path(out).read_bytes()
    first_split = Path(out + ".split.json").read_bytes()
    assert cli.run(argv) == 0
    assert Path(out).read_bytes() == first
    assert Path(out + ".split.json").read_bytes() == first_split


def test_pairs_gen_siblings(workspace):
    root, _th, _corpus, th_path, corpus_path = workspace
    out = str(root / "siblings.tsv")
    argv = [
        "pairs", "gen", "--thesaurus", th_path, "--corpus", corpus_path,
        "--config", "siblings", "--branches", "CD", "--seed", "7", "--out", out,
    ]
    assert cli.run(argv) == 0
    rows = [l.split("\t") for l in Path(out).read_text().strip().splitlines()]
    assert {r[3] for r in rows} <= {"annotated", "ancestor-positive", "sibling-negative"}


def test_full_model_pipeline(workspace):
    root, th, _corpus, th_path, corpus_path = workspace
    pairs_out = str(root / "train_pairs.tsv")
    cli.run([
        "pairs", "gen", "--thesaurus", th_path, "--corpus", corpus_path,
        "--config", "balanced", "--seed", "5", "--out", pairs_out,
    ])
    ckpt = str(root / "model.ckpt")
    argv_train = [
        "model", "train", "--thesaurus", th_path, "--corpus", corpus_path,
        "--pairs", pairs_out, "--mode", "mtl", "--seed", "5",
        "--epochs", "2", "--lr-main", "3e-3", "--lr-decoder", "1e-2",
        "--width", "32", "--max-len", "64", "--out", ckpt,
    ]
    assert cli.run(argv_train) == 0
    history = json.loads(Path(ckpt + ".history.json").read_text())
    assert history["history"][0]["epoch"] == pytest.approx(0.25, abs=0.05)

    metrics_out = str(root / "metrics.json")
    assert cli.run([
        "model", "eval", "--thesaurus", th_path, "--corpus", corpus_path,
        "--pairs", pairs_out, "--ckpt", ckpt, "--seed", "5", "--out", metrics_out,
    ]) == 0
    payload = json.loads(Path(metrics_out).read_text())
    assert 0.0 <= payload["overall"]["f1"] <= 1.0
    assert Path(metrics_out + ".freq.csv").exists()
    assert Path(metrics_out + ".depth.csv").exists()

    emb_out = str(root / "model.emb1")
    assert cli.run([
        "model", "embed", "--thesaurus", th_path, "--ckpt", ckpt, "--out", emb_out,
    ]) == 0
    table = read_emb(emb_out)
    assert len(table) == len(th)


def test_probe_pipeline(workspace):
    root, th, _corpus, th_path, _corpus_path = workspace
    rng = np.random.default_rng(0)
    emb = EmbeddingTable(dim=16)
    for desc_id in th.ids():
        emb.add(desc_id, rng.normal(size=16).astype(np.float32))
    emb_path = str(root / "random.emb1")
    write_emb(emb, emb_path)

    ds_out = str(root / "probe_ds.tsv")
    argv_build = [
        "probe", "build", "--thesaurus", th_path, "--emb", emb_path,
        "--probe", "shortest-path", "--sample-fraction", "1.0",
        "--branches", "CD", "--seed", "3", "--out", ds_out,
    ]
    assert cli.run(argv_build) == 0
    first = Path(ds_out).read_bytes()
    assert cli.run(argv_build) == 0
    assert Path(ds_out).read_bytes() == first

    probe_ckpt = str(root / "probe.ckpt")
    assert cli.run([
        "probe", "train", "--dataset", ds_out, "--emb", emb_path,
        "--rank", "8", "--probe-mode", "direct", "--lr", "0.05",
        "--epochs", "30", "--seed", "1", "--out", probe_ckpt,
    ]) == 0
    metrics = json.loads(Path(probe_ckpt + ".metrics.json").read_text())
    assert metrics["task"] == "shortest-path"
    assert "error" in metrics

    eval_out = str(root / "probe_eval.json")
    assert cli.run([
        "probe", "eval", "--probe-ckpt", probe_ckpt, "--dataset", ds_out,
        "--emb", emb_path, "--out", eval_out,
    ]) == 0
    assert json.loads(Path(eval_out).read_text())["n_pairs"] == metrics["n_pairs"]


def test_baseline_isin(workspace):
    root, _th, _corpus, th_path, corpus_path = workspace
    pairs_out = str(root / "bpairs.tsv")
    cli.run([
        "pairs", "gen", "--thesaurus", th_path, "--corpus", corpus_path,
        "--config", "balanced", "--seed", "9", "--out", pairs_out,
    ])
    out = str(root / "isin.json")
    assert cli.run([
        "baseline", "--method", "isin", "--thesaurus", th_path, "--corpus", corpus_path,
        "--pairs", pairs_out, "--seed", "9", "--out", out,
    ]) == 0
    payload = json.loads(Path(out).read_text())
    assert payload["configuration"] == "baseline-isin"


def test_baseline_cossim_threshold_selection(workspace):
    root, th, corpus, th_path, corpus_path = workspace
    pairs_out = str(root / "cpairs.tsv")
    cli.run([
        "pairs", "gen", "--thesaurus", th_path, "--corpus", corpus_path,
        "--config", "balanced", "--seed", "11", "--out", pairs_out,
    ])
    rng = np.random.default_rng(5)
    labels = EmbeddingTable(dim=8)
    for desc_id in th.ids():
        labels.add(desc_id, rng.normal(size=8).astype(np.float32))
    docs = EmbeddingTable(dim=8)
    for doc in corpus:
        base = labels.get(doc.labels[0]).astype(np.float64)
        docs.add(doc.doc_id, (base + rng.normal(scale=0.4, size=8)).astype(np.float32))
    labels_path = str(root / "labels.emb1")
    docs_path = str(root / "docs.emb1")
    write_emb(labels, labels_path)
    write_emb(docs, docs_path)
    out = str(root / "cossim.json")
    assert cli.run([
        "baseline", "--method", "cossim", "--thesaurus", th_path, "--corpus", corpus_path,
        "--pairs", pairs_out, "--labels-emb", labels_path, "--docs-emb", docs_path,
        "--seed", "11", "--out", out,
    ]) == 0
    payload = json.loads(Path(out).read_text())
    assert 0.0 <= payload["threshold"] <= 1.0
    assert payload["f1"] > 0.5  # docs built near their first label


def test_defaults_file_supplies_flags(workspace, tmp_path):
    root, _th, _corpus, th_path, _ = workspace
    defaults = tmp_path / "defaults.json"
    defaults.write_text(json.dumps({"seed": 21}))
    out = str(tmp_path / "stats.json")
    assert cli.run([
        "thesaurus", "stats", "--input", th_path, "--defaults", str(defaults), "--out", out,
    ]) == 0
    manifest = json.loads(Path(out + ".manifest.json").read_text())
    assert manifest["params"]["seed"] == 21


def test_data_error_exit_code(tmp_path):
    out = str(tmp_path / "x.json")
    assert cli.run(["thesaurus", "stats", "--input", "/nonexistent.tsv", "--out", out]) == 1


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc_info:
        cli.run(["thesaurus", "stats", "--nope"])
    assert exc_info.value.code == 2


def test_malformed_thesaurus_exit_code(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("not a record\n")
    out = str(tmp_path / "x.json")
    assert cli.run(["thesaurus", "stats", "--input", str(bad), "--out", out]) == 1


def test_probe_build_distance_cache(workspace, tmp_path):
    root, th, _corpus, th_path, _ = workspace
    rng = np.random.default_rng(1)
    emb = EmbeddingTable(dim=8)
    for desc_id in th.ids():
        emb.add(desc_id, rng.normal(size=8).astype(np.float32))
    emb_path = str(tmp_path / "e.emb1")
    write_emb(emb, emb_path)
    cache = str(tmp_path / "dist.dst1")
    out = str(tmp_path / "ds.tsv")
    argv = [
        "probe", "build", "--thesaurus", th_path, "--emb", emb_path,
        "--probe", "shortest-path", "--sample-fraction", "0.5",
        "--branches", "CD", "--seed", "2", "--distance-cache", cache, "--out", out,
    ]
    assert cli.run(argv) == 0
    assert Path(cache).exists()
    first = Path(out).read_bytes()
    assert cli.run(argv) == 0  # second run reads the cache
    assert Path(out).read_bytes() == first
    # stale cache (different graph) is rejected
    argv_stale = [a if a != "CD" else "C" for a in argv]
    assert cli.run(argv_stale) == 1

"""Batch command-line entry points.

Every run is driven by one explicit seed, writes its outputs plus a manifest
(resolved configuration, seeds, content hashes of the inputs), and is
byte-identical across repeat invocations with the same arguments. Exit codes:
0 success, 1 data error (single-line reason on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import evaluation as ev
from . import hierarchy as hi
from . import model as md
from . import pairs as pr
from . import probe as pb
from . import thesaurus as ts
from .embed_io import EmbeddingTable, cosine, read_emb, write_emb


class DataError(Exception):
    """Wrapper for anticipated failures that should exit 1."""


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(payload: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2))
        fh.write("\n")


def write_manifest(command: str, args: argparse.Namespace, inputs: list[str], outputs: list[str]) -> None:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "defaults")}
    manifest = {
        "tool": "meshkit",
        "version": __version__,
        "command": command,
        "params": params,
        "inputs": {path: _sha256(path) for path in sorted(set(inputs))},
        "outputs": sorted(set(outputs)),
    }
    _write_json(manifest, args.out + ".manifest.json")


def _load_thesaurus(args) -> ts.Thesaurus:
    th, report = ts.load_thesaurus_file(args.thesaurus, strict=not getattr(args, "lenient", False))
    if report.skipped:
        print(f"skipped {len(report.skipped)} bad record(s)", file=sys.stderr)
    return th


def _split_for(args, corpus: pr.Corpus, th: ts.Thesaurus) -> pr.SplitSpec:
    return pr.split_zero_shot(corpus, args.holdout, args.seed, th=th)


# ---------------- subcommands ----------------


def cmd_thesaurus_stats(args) -> int:
    th = _load_thesaurus(args)
    depths = [tn.depth for d in th.descriptors.values() for tn in d.tree_numbers]
    by_branch: dict[str, int] = {}
    for desc in th.descriptors.values():
        for letter in sorted(desc.letters):
            by_branch[letter] = by_branch.get(letter, 0) + 1
    stats = {
        "descriptors": len(th),
        "tree_numbers": len(th.tree_index),
        "vocab_size": ts.VOCAB_SIZE,
        "max_depth": max(depths) if depths else 0,
        "mean_depth": float(np.mean(depths)) if depths else 0.0,
        "descriptors_by_branch": by_branch,
        "multi_tree_number_descriptors": sum(
            1 for d in th.descriptors.values() if len(d.tree_numbers) > 1
        ),
    }
    _write_json(stats, args.out)
    write_manifest("thesaurus stats", args, [args.thesaurus], [args.out])
    return 0


def cmd_pairs_gen(args) -> int:
    th = _load_thesaurus(args)
    corpus = pr.load_corpus_file(args.corpus)
    split = _split_for(args, corpus, th)
    if args.config == "balanced":
        pairset = pr.gen_balanced(corpus, split, args.seed)
    else:
        g = hi.build_graph(th, branches=set(args.branches))
        pairset = pr.gen_siblings(corpus, split, th, g)
        if pairset.skipped:
            print(f"skipped {len(pairset.skipped)} out-of-branch labels", file=sys.stderr)
    pr.write_pairs(pairset, args.out)
    split_payload = {
        "seed": split.seed,
        "holdout_terms": sorted(split.holdout_terms),
        "train_docs": sorted(split.train_docs),
        "val_docs": sorted(split.val_docs),
        "test_docs": sorted(split.test_docs),
    }
    _write_json(split_payload, args.out + ".split.json")
    write_manifest(
        "pairs gen", args, [args.thesaurus, args.corpus], [args.out, args.out + ".split.json"]
    )
    return 0


def _encoder_config(args, vocab_size: int) -> md.EncoderConfig:
    return md.EncoderConfig(
        text_vocab=vocab_size,
        width=args.width,
        max_len=args.max_len,
        kind=args.encoder,
        layers=args.layers,
    )


def cmd_model_train(args) -> int:
    th = _load_thesaurus(args)
    corpus = pr.load_corpus_file(args.corpus)
    split = _split_for(args, corpus, th)
    pairset = pr.read_pairs(args.pairs, "balanced", split)
    config = md.TrainConfig(
        mode=args.mode,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr_main=args.lr_main,
        lr_decoder=args.lr_decoder,
        weight_decay=args.weight_decay,
        teacher_forcing=args.teacher_forcing,
        budget=args.budget,
        seed=args.seed,
    )
    trainer = md.train(pairset, corpus, th, config, encoder=_encoder_config(args, 1))
    md.save_model(trainer, args.out)
    history_path = args.out + ".history.json"
    _write_json({"history": [vars(h) for h in trainer.history]}, history_path)
    write_manifest(
        "model train", args, [args.thesaurus, args.corpus, args.pairs], [args.out, history_path]
    )
    return 0


def cmd_model_eval(args) -> int:
    th = _load_thesaurus(args)
    corpus = pr.load_corpus_file(args.corpus)
    split = _split_for(args, corpus, th)
    pairset = pr.read_pairs(args.pairs, args.config, split)
    trainer = md.load_model(args.ckpt)
    eval_pairs = pairset.for_partition(args.partition)
    if not eval_pairs:
        raise DataError(f"no pairs in partition {args.partition!r}")
    predictions = md.predict_pairs(trainer, eval_pairs, corpus, th)
    gold = {(p.descriptor, p.doc_id): p.positive for p in eval_pairs}
    report = ev.prf(predictions, gold, args.threshold, configuration=args.config)
    train_counts: dict[str, int] = {}
    for p in pairset.for_partition("train"):
        if p.positive:
            train_counts[p.descriptor] = train_counts.get(p.descriptor, 0) + 1
    freq_report = ev.f1_by_frequency(predictions, gold, train_counts, args.threshold)
    depth_report = ev.f1_by_depth(predictions, gold, th, args.threshold)
    payload: dict[str, Any] = {
        "overall": report.as_dict(),
        "by_frequency": freq_report.as_dict(),
        "by_depth": depth_report.as_dict(),
    }
    zsc_gold = {k: v for k, v in gold.items() if k[0] in split.holdout_terms}
    if zsc_gold:
        zsc_preds = {k: predictions[k] for k in zsc_gold}
        payload["zero_shot"] = ev.prf(
            zsc_preds, zsc_gold, args.threshold, configuration="zsc-" + args.config
        ).as_dict()
    _write_json(payload, args.out)
    outputs = [args.out]
    for rep, suffix in ((freq_report, ".freq.csv"), (depth_report, ".depth.csv")):
        ev.write_binned_csv(rep, args.out + suffix)
        outputs.append(args.out + suffix)
    write_manifest(
        "model eval", args, [args.thesaurus, args.corpus, args.pairs, args.ckpt], outputs
    )
    return 0


def cmd_model_embed(args) -> int:
    th = _load_thesaurus(args)
    trainer = md.load_model(args.ckpt)
    table = md.embed_descriptors(trainer, th, pooling=args.pooling)
    write_emb(table, args.out)
    write_manifest("model embed", args, [args.thesaurus, args.ckpt], [args.out])
    return 0


def _read_probe_dataset(path: str, embeddings: EmbeddingTable) -> pb.ProbeDataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise DataError(f"{path!r} lacks a probe-dataset header")
        meta = dict(item.split("=", 1) for item in header[1:].split())
        splits: dict[str, list[pb.ProbePair]] = {"train": [], "val": [], "eval": []}
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 4:
                raise DataError(f"{path!r} line {line_no}: expected 4 fields")
            i, j, gold, split_name = fields
            splits[split_name].append(pb.ProbePair(i, j, float(gold)))
    train_desc = sorted({d for p in splits["train"] for d in (p.i, p.j)})
    held_desc = sorted({d for s in ("val", "eval") for p in splits[s] for d in (p.i, p.j)})
    k = meta.get("k", "")
    return pb.ProbeDataset(
        task=meta["task"],
        k=int(k) if k else None,
        train=splits["train"],
        val=splits["val"],
        eval=splits["eval"],
        embeddings=embeddings,
        train_descriptors=tuple(train_desc),
        heldout_descriptors=tuple(held_desc),
    )


def _write_probe_dataset(ds: pb.ProbeDataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#task={ds.task} k={ds.k if ds.k is not None else ''}\n")
        for split_name in ("train", "val", "eval"):
            for p in getattr(ds, split_name):
                fh.write(f"{p.i}\t{p.j}\t{p.gold:g}\t{split_name}\n")


def cmd_probe_build(args) -> int:
    th = _load_thesaurus(args)
    g = hi.build_graph(th, branches=set(args.branches))
    if args.distance_cache and os.path.exists(args.distance_cache):
        oracle = hi.read_distance_cache(args.distance_cache)
        if oracle.nodes != g.nodes:
            raise DataError(f"distance cache {args.distance_cache!r} is stale for this graph")
    else:
        oracle = hi.shortest_path_matrix(g)
        if args.distance_cache:
            hi.write_distance_cache(oracle, args.distance_cache)
    embeddings = read_emb(args.emb)
    ds = pb.build_probe_dataset(
        th,
        g,
        oracle,
        embeddings,
        task=args.probe,
        k=args.k,
        sample_fraction=args.sample_fraction,
        seed=args.seed,
    )
    _write_probe_dataset(ds, args.out)
    write_manifest("probe build", args, [args.thesaurus, args.emb], [args.out])
    return 0


def cmd_probe_train(args) -> int:
    embeddings = read_emb(args.emb)
    ds = _read_probe_dataset(args.dataset, embeddings)
    config = pb.ProbeTrainConfig(
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        weight_decay=args.weight_decay,
        mode=args.probe_mode,
        patience=args.patience,
        seed=args.seed,
    )
    params, metrics = pb.train_probe(ds, rank=args.rank, config=config)
    pb.save_probe(params, metrics, args.out)
    _write_json(_probe_metrics_payload(metrics), args.out + ".metrics.json")
    write_manifest("probe train", args, [args.dataset, args.emb], [args.out, args.out + ".metrics.json"])
    return 0


def _probe_metrics_payload(metrics: pb.ProbeMetrics) -> dict:
    payload = {
        "task": metrics.task,
        "mode": metrics.mode,
        "k": metrics.k,
        "n_pairs": metrics.n_pairs,
    }
    if metrics.error is not None:
        payload.update(error=metrics.error, gold_mean=metrics.gold_mean, gold_std=metrics.gold_std)
    if metrics.f1 is not None:
        payload.update(f1=metrics.f1, precision=metrics.precision, recall=metrics.recall)
    if metrics.curves:
        payload["final_train_loss"] = metrics.curves["train"][-1]
        payload["epochs_run"] = len(metrics.curves["train"])
    return payload


def cmd_probe_eval(args) -> int:
    embeddings = read_emb(args.emb)
    ds = _read_probe_dataset(args.dataset, embeddings)
    params, config = pb.load_probe(args.probe_ckpt)
    metrics = pb.eval_probe(params, ds, mode=config.get("mode", "squared"), split=args.split)
    _write_json(_probe_metrics_payload(metrics), args.out)
    write_manifest("probe eval", args, [args.dataset, args.emb, args.probe_ckpt], [args.out])
    return 0


def cmd_baseline(args) -> int:
    th = _load_thesaurus(args)
    corpus = pr.load_corpus_file(args.corpus)
    split = _split_for(args, corpus, th)
    pairset = pr.read_pairs(args.pairs, args.config, split)
    eval_pairs = pairset.for_partition(args.partition)
    if not eval_pairs:
        raise DataError(f"no pairs in partition {args.partition!r}")
    gold = {(p.descriptor, p.doc_id): p.positive for p in eval_pairs}
    if args.method == "isin":
        predictions = {
            (p.descriptor, p.doc_id): float(
                ev.baseline_isin(th.get(p.descriptor).label, corpus.get(p.doc_id).abstract)
            )
            for p in eval_pairs
        }
        threshold = 0.5
    else:
        labels_emb = read_emb(args.labels_emb)
        docs_emb = read_emb(args.docs_emb)

        def score(pair: pr.Pair) -> float:
            return cosine(labels_emb.get(pair.descriptor), docs_emb.get(pair.doc_id))

        predictions = {(p.descriptor, p.doc_id): score(p) for p in eval_pairs}
        if args.threshold is not None:
            threshold = args.threshold
        else:
            val_pairs = pairset.for_partition("val")
            if not val_pairs:
                raise DataError("cosine threshold selection needs validation pairs")
            val_scores = {(p.descriptor, p.doc_id): score(p) for p in val_pairs}
            val_gold = {(p.descriptor, p.doc_id): p.positive for p in val_pairs}
            threshold = ev.select_cosine_threshold(val_scores, val_gold)
    report = ev.prf(predictions, gold, threshold, configuration=f"baseline-{args.method}")
    payload = report.as_dict()
    payload["threshold"] = threshold
    _write_json(payload, args.out)
    inputs = [args.thesaurus, args.corpus, args.pairs]
    if args.method == "cossim":
        inputs += [args.labels_emb, args.docs_emb]
    write_manifest("baseline", args, inputs, [args.out])
    return 0


# ---------------- argument plumbing ----------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--defaults", help="JSON file supplying flag defaults")
    parser.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshkit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"meshkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_th = sub.add_parser("thesaurus", help="thesaurus inspection")
    th_sub = p_th.add_subparsers(dest="subcommand", required=True)
    p_stats = th_sub.add_parser("stats")
    p_stats.add_argument("--input", dest="thesaurus", required=True)
    p_stats.add_argument("--lenient", action="store_true")
    _add_common(p_stats)
    p_stats.set_defaults(func=cmd_thesaurus_stats)

    p_pairs = sub.add_parser("pairs", help="pair-set generation")
    pairs_sub = p_pairs.add_subparsers(dest="subcommand", required=True)
    p_gen = pairs_sub.add_parser("gen")
    p_gen.add_argument("--thesaurus", required=True)
    p_gen.add_argument("--corpus", required=True)
    p_gen.add_argument("--config", choices=("balanced", "siblings"), default="balanced")
    p_gen.add_argument("--holdout", type=int, default=0)
    p_gen.add_argument("--branches", default="NECDG")
    p_gen.add_argument("--lenient", action="store_true")
    _add_common(p_gen)
    p_gen.set_defaults(func=cmd_pairs_gen)

    p_model = sub.add_parser("model", help="toy model training and evaluation")
    model_sub = p_model.add_subparsers(dest="subcommand", required=True)
    p_train = model_sub.add_parser("train")
    p_train.add_argument("--thesaurus", required=True)
    p_train.add_argument("--corpus", required=True)
    p_train.add_argument("--pairs", required=True)
    p_train.add_argument("--mode", choices=("stl", "mtl"), default="mtl")
    p_train.add_argument("--holdout", type=int, default=0)
    p_train.add_argument("--epochs", type=float, default=4.0)
    p_train.add_argument("--batch-size", type=int, default=16)
    p_train.add_argument("--lr-main", type=float, default=2e-5)
    p_train.add_argument("--lr-decoder", type=float, default=5e-4)
    p_train.add_argument("--weight-decay", type=float, default=0.01)
    p_train.add_argument("--teacher-forcing", type=float, default=1.0)
    p_train.add_argument("--budget", type=int, default=128)
    p_train.add_argument("--width", type=int, default=64)
    p_train.add_argument("--max-len", type=int, default=128)
    p_train.add_argument("--encoder", choices=("bag", "attn"), default="bag")
    p_train.add_argument("--layers", type=int, default=1)
    p_train.add_argument("--lenient", action="store_true")
    _add_common(p_train)
    p_train.set_defaults(func=cmd_model_train)

    p_eval = model_sub.add_parser("eval")
    p_eval.add_argument("--thesaurus", required=True)
    p_eval.add_argument("--corpus", required=True)
    p_eval.add_argument("--pairs", required=True)
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--config", choices=("balanced", "siblings"), default="balanced")
    p_eval.add_argument("--holdout", type=int, default=0)
    p_eval.add_argument("--partition", choices=("train", "val", "test"), default="test")
    p_eval.add_argument("--threshold", type=float, default=0.5)
    p_eval.add_argument("--lenient", action="store_true")
    _add_common(p_eval)
    p_eval.set_defaults(func=cmd_model_eval)

    p_embed = model_sub.add_parser("embed")
    p_embed.add_argument("--thesaurus", required=True)
    p_embed.add_argument("--ckpt", required=True)
    p_embed.add_argument("--pooling", choices=("first-position", "mean", "max"), default="first-position")
    p_embed.add_argument("--lenient", action="store_true")
    _add_common(p_embed)
    p_embed.set_defaults(func=cmd_model_embed)

    p_probe = sub.add_parser("probe", help="structural probing")
    probe_sub = p_probe.add_subparsers(dest="subcommand", required=True)
    p_pbuild = probe_sub.add_parser("build")
    p_pbuild.add_argument("--thesaurus", required=True)
    p_pbuild.add_argument("--emb", required=True)
    p_pbuild.add_argument("--probe", choices=("shortest-path", "common-ancestors"), default="shortest-path")
    p_pbuild.add_argument("--k", type=int, default=1, choices=(1, 2, 3))
    p_pbuild.add_argument("--sample-fraction", type=float, default=0.1)
    p_pbuild.add_argument("--branches", default="NECDG")
    p_pbuild.add_argument("--distance-cache", help="reuse or create a DST1 matrix cache")
    p_pbuild.add_argument("--lenient", action="store_true")
    _add_common(p_pbuild)
    p_pbuild.set_defaults(func=cmd_probe_build)

    p_ptrain = probe_sub.add_parser("train")
    p_ptrain.add_argument("--dataset", required=True)
    p_ptrain.add_argument("--emb", required=True)
    p_ptrain.add_argument("--rank", type=int, default=512)
    p_ptrain.add_argument("--probe-mode", choices=("squared", "direct"), default="squared")
    p_ptrain.add_argument("--lr", type=float, default=2.5e-5)
    p_ptrain.add_argument("--epochs", type=int, default=200)
    p_ptrain.add_argument("--batch-size", type=int, default=0)
    p_ptrain.add_argument("--weight-decay", type=float, default=0.0)
    p_ptrain.add_argument("--patience", type=int, default=0)
    _add_common(p_ptrain)
    p_ptrain.set_defaults(func=cmd_probe_train)

    p_peval = probe_sub.add_parser("eval")
    p_peval.add_argument("--probe-ckpt", required=True)
    p_peval.add_argument("--dataset", required=True)
    p_peval.add_argument("--emb", required=True)
    p_peval.add_argument("--split", choices=("train", "val", "eval"), default="eval")
    _add_common(p_peval)
    p_peval.set_defaults(func=cmd_probe_eval)

    p_base = sub.add_parser("baseline", help="IsIn and cosine-similarity baselines")
    p_base.add_argument("--method", choices=("isin", "cossim"), required=True)
    p_base.add_argument("--thesaurus", required=True)
    p_base.add_argument("--corpus", required=True)
    p_base.add_argument("--pairs", required=True)
    p_base.add_argument("--config", choices=("balanced", "siblings"), default="balanced")
    p_base.add_argument("--holdout", type=int, default=0)
    p_base.add_argument("--partition", choices=("train", "val", "test"), default="test")
    p_base.add_argument("--labels-emb")
    p_base.add_argument("--docs-emb")
    p_base.add_argument("--threshold", type=float)
    p_base.add_argument("--lenient", action="store_true")
    _add_common(p_base)
    p_base.set_defaults(func=cmd_baseline)

    return parser


def _merge_defaults(argv: Sequence[str]) -> list[str]:
    """Inject flags from the --defaults JSON file ahead of the explicit ones,
    so anything given on the command line overrides the file."""
    argv = list(argv)
    if "--defaults" not in argv:
        return argv
    path = argv[argv.index("--defaults") + 1]
    with open(path, "r", encoding="utf-8") as fh:
        overrides = json.load(fh)
    if not isinstance(overrides, dict):
        raise DataError("defaults file must hold a JSON object")
    split_at = 0
    while split_at < len(argv) and not argv[split_at].startswith("-"):
        split_at += 1
    head, tail = argv[:split_at], argv[split_at:]
    injected: list[str] = []
    for key, value in sorted(overrides.items()):
        flag = f"--{key}"
        if flag in tail:
            continue
        if isinstance(value, bool):
            if value:
                injected.append(flag)
        else:
            injected.extend([flag, str(value)])
    return head + injected + tail


def run(argv: Sequence[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(_merge_defaults(argv))
    except (OSError, json.JSONDecodeError, DataError, IndexError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (
        DataError,
        ts.ThesaurusError,
        hi.HierarchyError,
        pr.PairsError,
        pb.ProbeError,
        ev.EvaluationError,
        md.DivergedLoss,
        OSError,
        ValueError,
        KeyError,
    ) as exc:
        message = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

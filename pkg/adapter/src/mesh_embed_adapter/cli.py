"""Command-line entry point: encode an input file into an EMB1 table."""

from __future__ import annotations

import argparse
import sys

from .extract import CheckpointUnavailable, EmptyInput, ExtractionSpec, extract
from .ingest import read_corpus_inputs, read_pairs_inputs, read_thesaurus_inputs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mesh-embed-adapter", description=__doc__)
    parser.add_argument("--checkpoint", required=True, help="encoder identifier or local path")
    parser.add_argument("--pooling", choices=("first-position", "mean", "max"), default="mean")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--thesaurus", help="thesaurus ingest file: embeds 'label : description'")
    source.add_argument("--corpus", help="corpus ingest file: embeds abstracts")
    source.add_argument("--inputs", help="generic id<TAB>text file")
    parser.add_argument("--max-length", type=int, default=512)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--out", required=True)
    return parser


def run(argv) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.thesaurus:
            inputs = read_thesaurus_inputs(args.thesaurus)
        elif args.corpus:
            inputs = read_corpus_inputs(args.corpus)
        else:
            inputs = read_pairs_inputs(args.inputs)
        spec = ExtractionSpec(
            checkpoint=args.checkpoint,
            pooling=args.pooling,
            inputs=inputs,
            max_length=args.max_length,
            batch_size=args.batch_size,
        )
        count = extract(spec, args.out)
    except (CheckpointUnavailable, EmptyInput, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {count} embeddings to {args.out}")
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

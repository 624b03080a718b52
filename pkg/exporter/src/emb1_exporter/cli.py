"""Command line for the exporter: corpus + articles + encoder in, EMB1 out."""

from __future__ import annotations

import argparse
import sys

from .corpus import CorpusFormatError, MAX_SENTENCES, MAX_TOKENS
from .emb1 import Emb1Error
from .export import ExportError, ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emb1-export",
        description="Run a frozen pretrained encoder over a corpus and write "
                    "token embeddings in the EMB1 format.")
    parser.add_argument("--corpus", required=True,
                        help="native corpus JSONL path")
    parser.add_argument("--articles", required=True,
                        help="article JSONL path")
    parser.add_argument("--encoder", required=True,
                        help="model id or local model directory "
                             "(e.g. a legal-domain or general encoder)")
    parser.add_argument("--out", required=True, help="EMB1 output path")
    parser.add_argument("--max-tokens", type=int, default=MAX_TOKENS)
    parser.add_argument("--max-sentences", type=int, default=MAX_SENTENCES)
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExportJob(corpus_path=args.corpus, article_path=args.articles,
                        encoder=args.encoder, output_path=args.out,
                        max_tokens=args.max_tokens,
                        max_sentences=args.max_sentences,
                        batch_size=args.batch_size, device=args.device)
        count = export(job)
    except (ExportError, CorpusFormatError, Emb1Error, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {count} entries to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point wiring the experiment matrix.

Subcommands: `synth` (deterministic synthetic corpus), `embed-toy` (hash
token encoder to an EMB1 store), `train` (any task/variant/regime/adapt
combination), `eval` (source/target F1 reports from a checkpoint).

Exit codes: 0 success, 1 usage error, 2 runtime error. Relative data paths
are also resolved against $LEXADAPT_DATA_DIR when set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .adaptation import AdaptationError
from .corpus import (
    CorpusError,
    KNOWN_ARTICLES,
    build_regime_pools,
    gen_synthetic,
    load_corpus,
    make_split,
    partition_docs,
    write_articles_jsonl,
    write_corpus_jsonl,
)
from .embeddings import StoreError, read_store, toy_encode_corpus, write_store
from .evaluation import EvalError, evaluate_run, format_table
from .model import ModelConfig, ModelError
from .training import (
    CheckpointError,
    TrainConfig,
    TrainError,
    build_fact_instances,
    fit,
    load_checkpoint,
)

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    base = os.environ.get("LEXADAPT_DATA_DIR")
    if base and (Path(base) / p).exists():
        return Path(base) / p
    return p


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.vocab < 4 * args.articles:
        raise UsageError(
            f"--vocab {args.vocab} too small: need >= {4 * args.articles} "
            f"for {args.articles} articles")
    if not 0.0 <= args.strength <= 1.0:
        raise UsageError("--strength must be in [0, 1]")
    region_map = None
    if args.shift_regions:
        # Interleaved covariate shift: even article indices draw triggers
        # from the lower vocab region, odd ones from an overlapping upper
        # region.
        region_map = {
            i: ((0.0, 0.6) if i % 2 == 0 else (0.3, 0.95))
            for i in range(args.articles)
        }
    docs, articles = gen_synthetic(
        args.docs, args.articles, args.vocab, args.strength, args.seed,
        region_map=region_map)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus_jsonl(docs, out / "corpus.jsonl")
    write_articles_jsonl(articles, out / "articles.jsonl")
    print(f"wrote {len(docs)} documents and {len(articles)} articles to {out}")
    return 0


# ---------------------------------------------------------------------------
# embed-toy
# ---------------------------------------------------------------------------

def cmd_embed_toy(args) -> int:
    if args.dim < 8:
        raise UsageError("--dim must be >= 8 for the toy encoder")
    corpus_path, article_path = _corpus_paths(args.corpus, args.articles)
    docs, articles = load_corpus(corpus_path, args.format, article_path)
    store = toy_encode_corpus(docs, articles, args.dim, args.seed)
    write_store(store, args.out)
    print(f"wrote {len(store)} embeddings (dim {args.dim}) to {args.out}")
    return 0


def _corpus_paths(corpus: str, articles: str | None):
    corpus_path = _resolve(corpus)
    if corpus_path.is_dir():
        article_path = corpus_path / "articles.jsonl"
        corpus_path = corpus_path / "corpus.jsonl"
    else:
        article_path = Path(articles) if articles else None
    return corpus_path, article_path


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_REGIMES = {"none": "NONE", "uda": "UDA", "ada": "ADA"}
_ADAPT = {"none": "none", "disc": "discriminator", "wass": "wasserstein"}

_MODEL_FIELDS = ("d_in", "d_att_token", "h_gru", "d_att_sent",
                 "d_cls_hidden", "dropout", "max_sentences", "max_tokens")
_TRAIN_FIELDS = ("batch_size", "articles_per_batch", "pos_per_article",
                 "neg_per_article", "gamma", "clip_c", "uda_macro_pairing",
                 "lr", "adam_beta1", "adam_beta2", "adam_eps",
                 "plateau_factor", "plateau_patience", "max_epochs",
                 "threshold", "seed")


def _load_config_file(path: str) -> dict:
    """Accept JSON or flat key=value lines mirroring config field names."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        return json.loads(text)
    out: dict = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"config line {line_no}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _build_train_config(args, d_in: int, candidate_articles) -> TrainConfig:
    filecfg = _load_config_file(args.config) if args.config else {}
    model_over = dict(filecfg.get("model", {}))
    train_over = {}
    for key, value in filecfg.items():
        if key == "model":
            continue
        if key in _MODEL_FIELDS:
            model_over[key] = value
        elif key in _TRAIN_FIELDS:
            train_over[key] = value
        else:
            raise UsageError(f"unknown config key {key!r}")
    for key in ("gamma", "clip_c", "lr", "max_epochs", "seed", "threshold"):
        flag = getattr(args, key, None)
        if flag is not None:
            train_over[key] = flag
    if "d_in" in model_over and model_over["d_in"] != d_in:
        raise UsageError(
            f"config d_in {model_over['d_in']} != embedding store dim {d_in}")
    model_over["d_in"] = d_in
    try:
        model = ModelConfig(**model_over)
        return TrainConfig(
            model=model,
            task=args.task,
            variant="article_aware" if args.variant == "article" else "fact_only",
            adaptation=_ADAPT[args.adapt],
            regime=_REGIMES[args.regime],
            candidate_articles=tuple(candidate_articles),
            **train_over,
        )
    except (ModelError, TrainError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def _make_cli_split(args, regime: str):
    if args.split == "custom":
        if not args.source_articles or (args.target_articles is None):
            raise UsageError(
                "--split custom requires --source-articles and --target-articles")
        src = tuple(s for s in args.source_articles.split(",") if s)
        tgt = tuple(s for s in args.target_articles.split(",") if s)
        return make_split("custom", src, tgt, regime)
    return make_split(args.split, regime=regime)


def cmd_train(args) -> int:
    if args.variant == "fact" and (args.regime != "none" or args.adapt != "none"):
        raise UsageError("the fact-only baseline has no article domains; "
                         "use --regime none --adapt none")
    if args.adapt == "none" and args.regime != "none":
        print(f"note: --adapt none forces --regime none (was {args.regime})",
              file=sys.stderr)
        args.regime = "none"
    if args.adapt != "none" and args.regime == "none":
        raise UsageError(f"--adapt {args.adapt} requires --regime uda or ada")

    corpus_path, article_path = _corpus_paths(args.corpus, args.articles)
    docs, articles = load_corpus(corpus_path, args.format, article_path)
    store = read_store(_resolve(args.emb))
    train_docs, val_docs, _ = partition_docs(
        docs, args.val_frac, args.test_frac, args.data_seed)

    regime = _REGIMES[args.regime]
    loaded_codes = tuple(a.id for a in articles)
    if args.variant == "fact":
        candidates = loaded_codes
        config = _build_train_config(args, store.dim, candidates)
        train_pool = build_fact_instances(train_docs, config.task, candidates)
        val_pool = build_fact_instances(val_docs, config.task, candidates)
        target_pool = ()
    else:
        if args.split == "all":
            split = make_split("custom", loaded_codes, (), regime)
        else:
            split = _make_cli_split(args, regime)
        config = _build_train_config(args, store.dim, split.domain_enumeration)
        train_pools = build_regime_pools(train_docs, articles, config.task, split)
        val_pools = build_regime_pools(val_docs, articles, config.task,
                                       make_split("custom", split.source_articles,
                                                  split.target_articles, "NONE"))
        train_pool = train_pools.source
        val_pool = val_pools.source
        target_pool = train_pools.target

    log_path = args.log or (args.out + ".log.jsonl")
    Path(log_path).unlink(missing_ok=True)
    resume_state = load_checkpoint(_resolve(args.resume)) if args.resume else None
    state, logs = fit(
        train_pool, val_pool, config, store, target_pool=target_pool,
        log_path=log_path, checkpoint_path=args.out,
        last_checkpoint_path=args.out + ".last",
        resume_state=resume_state)
    best = state.best_val_loss
    print(f"trained {state.epoch} epochs ({state.step} steps); "
          f"best validation loss {best:.6f}; checkpoint at {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    if not 0.0 <= args.threshold <= 1.0:
        raise UsageError("--threshold must be in [0, 1]")
    state = load_checkpoint(_resolve(args.ckpt))
    corpus_path, article_path = _corpus_paths(args.corpus, args.articles)
    docs, articles = load_corpus(corpus_path, args.format, article_path)
    store = read_store(_resolve(args.emb))
    _, _, test_docs = partition_docs(
        docs, args.val_frac, args.test_frac, args.data_seed)
    if not test_docs:
        test_docs = docs
    if args.split == "all":
        split = make_split("custom", tuple(a.id for a in articles), (), "NONE")
    else:
        split = _make_cli_split(args, "NONE")
    source_rep, target_rep = evaluate_run(
        state, test_docs, store, split, args.task, args.threshold)
    label = f"{state.config.variant}/{state.config.regime}/{state.config.adaptation}"
    print(format_table([(label, source_rep, target_rep)]))
    if args.report:
        payload = {"source": source_rep.to_dict(), "target": target_rep.to_dict()}
        Path(args.report).write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n",
            encoding="utf-8")
        print(f"report written to {args.report}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="lexadapt",
                     description="Article-aware case outcome classification "
                                 "with zero-shot domain adaptation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--docs", type=int, required=True, help="number of documents")
    p.add_argument("--articles", type=int, required=True,
                   help=f"number of articles (max {len(KNOWN_ARTICLES)})")
    p.add_argument("--vocab", type=int, required=True, help="vocabulary size")
    p.add_argument("--strength", type=float, default=1.0,
                   help="planted rule strength in [0, 1]")
    p.add_argument("--seed", type=int, default=0, help="corpus seed")
    p.add_argument("--shift-regions", action="store_true",
                   help="draw trigger tokens from overlapping vocab regions "
                        "(covariate-shifted splits)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("embed-toy", help="toy-encode a corpus into an EMB1 store")
    p.add_argument("--corpus", required=True,
                   help="corpus directory or corpus.jsonl path")
    p.add_argument("--articles", default=None, help="article file path")
    p.add_argument("--format", choices=["native-jsonl", "lexglue-jsonl"],
                   default="native-jsonl")
    p.add_argument("--dim", type=int, default=16, help="embedding width (>= 8)")
    p.add_argument("--seed", type=int, default=0, help="encoder seed")
    p.add_argument("--out", required=True, help="output EMB1 path")
    p.set_defaults(func=cmd_embed_toy)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--task", choices=["A", "B"], required=True,
                   help="A = violation, B = allegation")
    p.add_argument("--variant", choices=["article", "fact"], default="article")
    p.add_argument("--regime", choices=["none", "uda", "ada"], default="none")
    p.add_argument("--adapt", choices=["none", "disc", "wass"], default="none")
    p.add_argument("--split", default="all",
                   help="split0_to_1 | split1_to_0 | custom | all")
    p.add_argument("--source-articles", default=None,
                   help="comma-separated codes for --split custom")
    p.add_argument("--target-articles", default=None,
                   help="comma-separated codes for --split custom")
    p.add_argument("--config", default=None,
                   help="JSON or key=value config file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--articles", default=None)
    p.add_argument("--format", choices=["native-jsonl", "lexglue-jsonl"],
                   default="native-jsonl")
    p.add_argument("--emb", required=True, help="EMB1 store path")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", default=None, help="JSONL training log path")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--val-frac", type=float, default=0.2)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--data-seed", type=int, default=1234,
                   help="doc partition seed")
    p.add_argument("--epochs", dest="max_epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--clip-c", dest="clip_c", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="all",
                   help="split0_to_1 | split1_to_0 | custom | all")
    p.add_argument("--source-articles", default=None)
    p.add_argument("--target-articles", default=None)
    p.add_argument("--task", choices=["A", "B"], required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--report", default=None, help="JSON report output path")
    p.add_argument("--corpus", required=True)
    p.add_argument("--articles", default=None)
    p.add_argument("--format", choices=["native-jsonl", "lexglue-jsonl"],
                   default="native-jsonl")
    p.add_argument("--emb", required=True)
    p.add_argument("--val-frac", type=float, default=0.2)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--data-seed", type=int, default=1234)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (CorpusError, StoreError, ModelError, AdaptationError, TrainError,
            CheckpointError, EvalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())

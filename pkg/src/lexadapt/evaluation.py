"""Multilabel prediction from pairwise probabilities, and per-article /
macro / micro F1 reports over source and target article sets."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import torch

from .corpus import Document, PairInstance, SplitSpec
from .embeddings import EmbeddingStore
from .model import ArticleAwareModel
from .training import EncCache, TrainState, score_pairs


class EvalError(ValueError):
    pass


@dataclass
class ArticleScore:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    """Per-article and aggregate F1 over one article set."""

    per_article: dict[str, ArticleScore]
    macro_f1: float
    micro_f1: float
    article_set: str = "all"   # source | target | all
    task: str = ""
    regime: str = ""
    adaptation: str = ""

    def to_dict(self) -> dict:
        return {
            "article_set": self.article_set,
            "task": self.task,
            "regime": self.regime,
            "adaptation": self.adaptation,
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "per_article": {
                code: {"precision": s.precision, "recall": s.recall,
                       "f1": s.f1, "support": s.support}
                for code, s in self.per_article.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            per_article={
                code: ArticleScore(**vals)
                for code, vals in d["per_article"].items()
            },
            macro_f1=d["macro_f1"], micro_f1=d["micro_f1"],
            article_set=d.get("article_set", "all"), task=d.get("task", ""),
            regime=d.get("regime", ""), adaptation=d.get("adaptation", ""),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def f1_scores(predictions: Mapping[str, set], gold: Mapping[str, set],
              article_set: Sequence[str], set_tag: str = "all",
              task: str = "", regime: str = "",
              adaptation: str = "") -> MetricsReport:
    """Confusion counts per article over documents, then F1 per article,
    unweighted macro mean, and micro F1 from the summed counts.

    An article with an all-zero confusion row (never gold, never predicted)
    contributes F1 = 0 to the macro mean; it is not skipped.
    """
    if set(predictions) != set(gold):
        raise EvalError("predictions and gold cover different documents")
    allowed = set(article_set)
    for doc_id, pred in predictions.items():
        stray = pred - allowed
        if stray:
            raise EvalError(
                f"prediction for {doc_id!r} references articles outside the "
                f"scored set: {sorted(stray)}")
    per_article: dict[str, ArticleScore] = {}
    tp_sum = fp_sum = fn_sum = 0
    for code in article_set:
        tp = fp = fn = 0
        support = 0
        for doc_id, pred in predictions.items():
            has_gold = code in gold[doc_id]
            has_pred = code in pred
            support += int(has_gold)
            tp += int(has_pred and has_gold)
            fp += int(has_pred and not has_gold)
            fn += int(has_gold and not has_pred)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
        per_article[code] = ArticleScore(prec, rec, f1, support)
        tp_sum += tp
        fp_sum += fp
        fn_sum += fn
    macro = (sum(s.f1 for s in per_article.values()) / len(per_article)
             if per_article else 0.0)
    micro_den = 2 * tp_sum + fp_sum + fn_sum
    micro = 2 * tp_sum / micro_den if micro_den else 0.0
    return MetricsReport(per_article=per_article, macro_f1=macro,
                         micro_f1=micro, article_set=set_tag, task=task,
                         regime=regime, adaptation=adaptation)


def predict_multilabel(model: ArticleAwareModel, doc_id: str,
                       article_set: Sequence[str], cache: EncCache,
                       threshold: float = 0.5) -> set[str]:
    """Articles whose pair probability clears the threshold (inference mode)."""
    pairs = [PairInstance(doc_id, code, None, i)
             for i, code in enumerate(article_set)]
    probs = score_pairs(model, pairs, cache)
    return {code for code, p in zip(article_set, probs) if p > threshold}


def predict_corpus(model: ArticleAwareModel, doc_ids: Sequence[str],
                   article_set: Sequence[str], cache: EncCache,
                   threshold: float = 0.5) -> dict[str, set[str]]:
    """Batched multilabel predictions for many documents at once."""
    pairs = [PairInstance(d, code, None, i)
             for d in doc_ids for i, code in enumerate(article_set)]
    probs = score_pairs(model, pairs, cache)
    out: dict[str, set[str]] = {d: set() for d in doc_ids}
    for pair, p in zip(pairs, probs):
        if p > threshold:
            out[pair.doc_ref].add(pair.article)
    return out


def gold_sets(docs: Sequence[Document], task: str,
              article_set: Sequence[str]) -> dict[str, set[str]]:
    allowed = set(article_set)
    out = {}
    for doc in docs:
        gold = doc.violated if task == "A" else doc.alleged
        out[doc.doc_id] = {c for c in gold if c in allowed}
    return out


def evaluate_run(state: TrainState, docs: Sequence[Document],
                 store: EmbeddingStore, split: SplitSpec, task: str,
                 threshold: float = 0.5) -> tuple[MetricsReport, MetricsReport]:
    """Source-set and target-set reports for a trained model over `docs`
    (normally the test partition)."""
    missing = [c for c in split.source_articles + split.target_articles
               if c not in store.articles]
    if missing:
        raise EvalError(f"split articles missing from store: {missing}")
    cache = EncCache(store)
    doc_ids = [d.doc_id for d in docs]
    reports = []
    for name, articles in (("source", split.source_articles),
                           ("target", split.target_articles)):
        if state.config.variant == "fact_only":
            preds = _predict_fact(state, doc_ids, articles, cache, threshold)
        else:
            preds = predict_corpus(state.model, doc_ids, articles, cache, threshold)
        gold = gold_sets(docs, task, articles)
        reports.append(f1_scores(
            preds, gold, articles, set_tag=name, task=task,
            regime=state.config.regime, adaptation=state.config.adaptation))
    return reports[0], reports[1]


def _predict_fact(state: TrainState, doc_ids: Sequence[str],
                  articles: Sequence[str], cache: EncCache,
                  threshold: float) -> dict[str, set[str]]:
    candidates = state.config.candidate_articles
    idx = {}
    for code in articles:
        if code not in candidates:
            raise EvalError(
                f"fact-only model has no output for article {code!r}")
        idx[code] = candidates.index(code)
    with torch.no_grad():
        probs = state.model.forward_docs(
            [cache.doc(d) for d in doc_ids], train_mode=False).numpy()
    return {
        d: {code for code in articles if probs[i, idx[code]] > threshold}
        for i, d in enumerate(doc_ids)
    }


def format_table(rows: Sequence[tuple[str, MetricsReport, MetricsReport]]
                 ) -> str:
    """Render model rows as a source/target macro/micro F1 text table."""
    lines = []
    header = (f"{'model':<28} {'src mac.':>9} {'src mic.':>9} "
              f"{'tgt mac.':>9} {'tgt mic.':>9}")
    lines.append(header)
    lines.append("-" * len(header))
    for name, src, tgt in rows:
        lines.append(
            f"{name:<28} {100 * src.macro_f1:>9.2f} {100 * src.micro_f1:>9.2f} "
            f"{100 * tgt.macro_f1:>9.2f} {100 * tgt.micro_f1:>9.2f}")
    return "\n".join(lines)

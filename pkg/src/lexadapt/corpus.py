"""Case/article corpus handling: loading, truncation, pair building, splits.

Cases and article texts are token-level structures. Every training and
evaluation unit is a (case, article) pair with a binary outcome label: for
task B the label says whether the article was alleged, for task A whether
the court found it violated. Articles double as domains for the adaptation
regimes, so a pair also carries the integer id of its article within the
active domain enumeration.

A deterministic synthetic generator (`gen_synthetic`) plants per-article
trigger tokens into documents so that desk-scale experiments have a known
learnable rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

# The ten article codes used as the label set. Order is fixed and is the
# canonical enumeration wherever "all articles" is meant.
KNOWN_ARTICLES: tuple[str, ...] = (
    "2", "3", "5", "6", "8", "9", "10", "11", "14", "P1-1",
)

MAX_SENTENCES = 50
MAX_TOKENS = 256

SPLIT_0: tuple[str, ...] = ("6", "8", "P1-1", "2", "9")
SPLIT_1: tuple[str, ...] = ("3", "5", "10", "14", "11")


class CorpusError(ValueError):
    """Raised for malformed corpus files or inconsistent corpus requests."""


@dataclass(frozen=True)
class Document:
    """One case: sentence/token structure plus gold labels for both tasks.

    ``violated`` is recorded as-is; it is not required to be a subset of
    ``alleged``.
    """

    doc_id: str
    sentences: tuple[tuple[str, ...], ...]
    date: str
    alleged: frozenset[str]
    violated: frozenset[str]

    def __post_init__(self) -> None:
        if not self.sentences:
            raise CorpusError(f"document {self.doc_id!r} has no sentences")
        if any(len(s) == 0 for s in self.sentences):
            raise CorpusError(f"document {self.doc_id!r} has an empty sentence")


@dataclass(frozen=True)
class ArticleText:
    """The text of one convention article, same structure limits as documents."""

    id: str
    sentences: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        if not self.sentences:
            raise CorpusError(f"article {self.id!r} has no sentences")


@dataclass(frozen=True)
class PairInstance:
    """The unit of training and evaluation: one (case, article) pair.

    ``label`` is None for unlabeled target-domain pairs under UDA.
    ``domain_id`` indexes the article within the active domain enumeration.
    """

    doc_ref: str
    article: str
    label: Optional[int]
    domain_id: int


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint source/target article groups plus the adaptation regime."""

    source_articles: tuple[str, ...]
    target_articles: tuple[str, ...]
    regime: str  # UDA | ADA | NONE

    def __post_init__(self) -> None:
        if set(self.source_articles) & set(self.target_articles):
            raise CorpusError("source and target article sets overlap")
        if self.regime not in ("UDA", "ADA", "NONE"):
            raise CorpusError(f"unknown regime {self.regime!r}")

    @property
    def domain_enumeration(self) -> tuple[str, ...]:
        """Articles in domain-id order: source first, then target under UDA."""
        if self.regime == "UDA":
            return self.source_articles + self.target_articles
        return self.source_articles

    @property
    def num_domains(self) -> int:
        return len(self.domain_enumeration)


def _check_codes(codes: Iterable[str], line_no: int, path: str) -> frozenset[str]:
    out = []
    for c in codes:
        c = str(c)
        if c not in KNOWN_ARTICLES:
            raise CorpusError(
                f"{path}: line {line_no}: unknown article code {c!r} "
                f"(known: {', '.join(KNOWN_ARTICLES)})"
            )
        out.append(c)
    return frozenset(out)


def truncate(doc: Document, max_sentences: int = MAX_SENTENCES,
             max_tokens: int = MAX_TOKENS) -> Document:
    """Clip a document to its first `max_sentences` sentences of at most
    `max_tokens` tokens each, preserving order."""
    sents = tuple(tuple(s[:max_tokens]) for s in doc.sentences[:max_sentences])
    if sents == doc.sentences:
        return doc
    return replace(doc, sentences=sents)


def truncate_article(article: ArticleText, max_sentences: int = MAX_SENTENCES,
                     max_tokens: int = MAX_TOKENS) -> ArticleText:
    sents = tuple(tuple(s[:max_tokens]) for s in article.sentences[:max_sentences])
    if sents == article.sentences:
        return article
    return replace(article, sentences=sents)


def _parse_native_doc(rec: dict, line_no: int, path: str) -> Document:
    try:
        doc_id = str(rec["doc_id"])
        date = str(rec.get("date", ""))
        raw_sents = rec["sentences"]
        alleged = rec.get("alleged", [])
        violated = rec.get("violated", [])
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"{path}: line {line_no}: missing field {exc}") from exc
    sents = tuple(
        tuple(str(t) for t in s) for s in raw_sents if len(s) > 0
    )
    if not sents:
        raise CorpusError(f"{path}: line {line_no}: document has no non-empty sentences")
    return Document(
        doc_id=doc_id,
        sentences=sents,
        date=date,
        alleged=_check_codes(alleged, line_no, path),
        violated=_check_codes(violated, line_no, path),
    )


def _parse_lexglue_doc(rec: dict, line_no: int, path: str) -> Document:
    # LexGLUE-style records carry raw paragraph strings in "text"; tokens are
    # whitespace-split. Label keys: explicit alleged/violated arrays when
    # present, otherwise "labels" fills the allegation field.
    doc_id = str(rec.get("case_id", rec.get("id", f"line{line_no}")))
    try:
        segments = rec["text"]
    except KeyError as exc:
        raise CorpusError(f"{path}: line {line_no}: missing field 'text'") from exc
    sents = tuple(
        tuple(str(seg).split()) for seg in segments if str(seg).split()
    )
    if not sents:
        raise CorpusError(f"{path}: line {line_no}: document has no non-empty sentences")
    if "allegedly_violated_articles" in rec or "violated_articles" in rec:
        alleged = rec.get("allegedly_violated_articles", [])
        violated = rec.get("violated_articles", [])
    else:
        alleged = rec.get("labels", [])
        violated = []
    return Document(
        doc_id=doc_id,
        sentences=sents,
        date=str(rec.get("date", "")),
        alleged=_check_codes(alleged, line_no, path),
        violated=_check_codes(violated, line_no, path),
    )


def _iter_jsonl(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {line_no}: not valid JSON") from exc
            if not isinstance(rec, dict):
                raise CorpusError(f"{path}: line {line_no}: record is not an object")
            yield line_no, rec


def load_articles(path: str | Path) -> list[ArticleText]:
    """Load the companion article file (native JSONL, one article per line)."""
    path = Path(path)
    articles = []
    seen = set()
    for line_no, rec in _iter_jsonl(path):
        try:
            code = str(rec["id"])
            raw_sents = rec["sentences"]
        except KeyError as exc:
            raise CorpusError(f"{path}: line {line_no}: missing field {exc}") from exc
        _check_codes([code], line_no, str(path))
        if code in seen:
            raise CorpusError(f"{path}: line {line_no}: duplicate article {code!r}")
        seen.add(code)
        sents = tuple(tuple(str(t) for t in s) for s in raw_sents if len(s) > 0)
        if not sents:
            raise CorpusError(f"{path}: line {line_no}: article {code!r} is empty")
        articles.append(truncate_article(ArticleText(id=code, sentences=sents)))
    return articles


def load_corpus(
    path: str | Path,
    task_format: str = "native-jsonl",
    article_path: str | Path | None = None,
    max_sentences: int = MAX_SENTENCES,
    max_tokens: int = MAX_TOKENS,
) -> tuple[list[Document], list[ArticleText]]:
    """Load documents plus the companion article file.

    `task_format` is "native-jsonl" (pre-tokenized sentences) or
    "lexglue-jsonl" (paragraph strings, whitespace-tokenized here). When
    `article_path` is not given, a sibling ``articles.jsonl`` is used.
    All documents are truncated to the configured limits on load.
    """
    path = Path(path)
    if task_format not in ("native-jsonl", "lexglue-jsonl"):
        raise CorpusError(f"unknown task_format {task_format!r}")
    parse = _parse_native_doc if task_format == "native-jsonl" else _parse_lexglue_doc
    docs = []
    seen = set()
    for line_no, rec in _iter_jsonl(path):
        doc = parse(rec, line_no, str(path))
        if doc.doc_id in seen:
            raise CorpusError(f"{path}: line {line_no}: duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
        docs.append(truncate(doc, max_sentences, max_tokens))
    if article_path is None:
        article_path = path.parent / "articles.jsonl"
    articles = load_articles(article_path)
    return docs, articles


def build_pairs(
    docs: Sequence[Document],
    articles: Sequence[ArticleText],
    task: str,
    candidate_set: Sequence[str],
) -> list[PairInstance]:
    """Emit one labeled pair per (doc, candidate article), in doc-major order.

    Label is membership of the article in the task's gold set. domain_id is
    the index of the article within `candidate_set`.
    """
    if task not in ("A", "B"):
        raise CorpusError(f"unknown task {task!r}")
    if not candidate_set:
        raise CorpusError("candidate_set is empty")
    loaded = {a.id for a in articles}
    missing = [c for c in candidate_set if c not in loaded]
    if missing:
        raise CorpusError(f"candidate articles not loaded: {missing}")
    pairs = []
    for doc in docs:
        gold = doc.violated if task == "A" else doc.alleged
        for idx, code in enumerate(candidate_set):
            pairs.append(PairInstance(
                doc_ref=doc.doc_id,
                article=code,
                label=int(code in gold),
                domain_id=idx,
            ))
    return pairs


def make_split(
    name: str,
    custom_source: Optional[Sequence[str]] = None,
    custom_target: Optional[Sequence[str]] = None,
    regime: str = "NONE",
) -> SplitSpec:
    """Build the named article split, or a custom one from explicit groups."""
    if name == "split0_to_1":
        return SplitSpec(SPLIT_0, SPLIT_1, regime)
    if name == "split1_to_0":
        return SplitSpec(SPLIT_1, SPLIT_0, regime)
    if name == "custom":
        if custom_source is None or custom_target is None:
            raise CorpusError("custom split requires explicit source and target sets")
        return SplitSpec(tuple(custom_source), tuple(custom_target), regime)
    raise CorpusError(f"unknown split name {name!r}")


def partition_docs(
    docs: Sequence[Document],
    val_frac: float = 0.2,
    test_frac: float = 0.2,
    seed: int = 1234,
) -> tuple[list[Document], list[Document], list[Document]]:
    """Deterministic train/val/test partition by seeded shuffle of doc order."""
    if val_frac < 0 or test_frac < 0 or val_frac + test_frac >= 1:
        raise CorpusError("invalid partition fractions")
    order = np.random.default_rng(seed).permutation(len(docs))
    n_val = int(round(len(docs) * val_frac))
    n_test = int(round(len(docs) * test_frac))
    n_train = len(docs) - n_val - n_test
    train = [docs[i] for i in order[:n_train]]
    val = [docs[i] for i in order[n_train:n_train + n_val]]
    test = [docs[i] for i in order[n_train + n_val:]]
    return train, val, test


@dataclass
class RegimePools:
    """Training-time pair pools for one split/regime.

    `source` pairs are labeled and carry domain ids over the split's domain
    enumeration. `target` pairs exist only under UDA and have label=None.
    """

    source: list[PairInstance]
    target: list[PairInstance]


def build_regime_pools(
    docs: Sequence[Document],
    articles: Sequence[ArticleText],
    task: str,
    split: SplitSpec,
) -> RegimePools:
    """Materialize the labeled source pool and (under UDA) the unlabeled
    target pool over the split's domain enumeration."""
    enum = split.domain_enumeration
    if split.regime == "UDA":
        all_pairs = build_pairs(docs, articles, task, enum)
        n_src = len(split.source_articles)
        source = [p for p in all_pairs if p.domain_id < n_src]
        target = [replace_label(p, None) for p in all_pairs if p.domain_id >= n_src]
        return RegimePools(source=source, target=target)
    source = build_pairs(docs, articles, task, split.source_articles)
    return RegimePools(source=source, target=[])


def replace_label(pair: PairInstance, label: Optional[int]) -> PairInstance:
    return PairInstance(pair.doc_ref, pair.article, label, pair.domain_id)


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

# Planted trigger sentences open with a shared claim token (article-independent
# structure, like the boilerplate allegation language real cases share) and,
# when the article is planted as violated, close with a violation token so
# task A has a learnable textual rule as well.
ALLEGE_MARKER = "claimraised"
VIOLATION_MARKER = "violfound"

# Per-article allegation priors fall off geometrically so the synthetic
# corpus mixes common, moderate and rare articles.
_BASE_ALLEGE_P = 0.5
_ALLEGE_DECAY = 0.72
_MIN_ALLEGE_P = 0.06
_VIOLATED_GIVEN_ALLEGED = 0.6
_TRIGGERS_PER_ARTICLE = 3
_DOC_SENTENCES = 8


def _vocab(vocab_size: int) -> list[str]:
    width = len(str(vocab_size - 1))
    return [f"w{i:0{width}d}" for i in range(vocab_size)]


def gen_synthetic(
    num_docs: int,
    num_articles: int,
    vocab_size: int,
    planted_rule_strength: float,
    seed: int,
    region_map: Optional[dict[int, tuple[float, float]]] = None,
) -> tuple[list[Document], list[ArticleText]]:
    """Generate a deterministic corpus with planted article-trigger rules.

    Each article owns a disjoint set of trigger tokens; a document that
    alleges an article embeds that article's triggers in one sentence with
    probability `planted_rule_strength`. Violated articles additionally mark
    their trigger sentence with a violation token. `region_map` optionally
    confines article i's triggers to the vocab index window
    ``[lo_frac*V, hi_frac*V)`` so covariate-shifted splits can be built;
    trigger sets stay disjoint regardless.
    """
    if num_articles > len(KNOWN_ARTICLES):
        raise CorpusError(f"num_articles > {len(KNOWN_ARTICLES)} not supported")
    if vocab_size < 4 * num_articles:
        raise CorpusError(
            f"vocab too small: need at least {4 * num_articles} tokens "
            f"for {num_articles} articles, got {vocab_size}"
        )
    if not 0.0 <= planted_rule_strength <= 1.0:
        raise CorpusError("planted_rule_strength must be a probability")

    rng = np.random.default_rng(seed)
    vocab = _vocab(vocab_size)
    codes = KNOWN_ARTICLES[:num_articles]

    # Assign disjoint trigger sets, optionally confined to vocab regions.
    taken: set[int] = set()
    triggers: dict[str, list[str]] = {}
    for i, code in enumerate(codes):
        if region_map and i in region_map:
            lo_f, hi_f = region_map[i]
            lo, hi = int(lo_f * vocab_size), int(hi_f * vocab_size)
        else:
            lo, hi = 0, vocab_size
        free = [j for j in range(lo, hi) if j not in taken]
        if len(free) < _TRIGGERS_PER_ARTICLE:
            raise CorpusError(f"vocab region for article index {i} too small")
        picked = rng.choice(len(free), size=_TRIGGERS_PER_ARTICLE, replace=False)
        idxs = sorted(free[int(p)] for p in picked)
        taken.update(idxs)
        triggers[code] = [vocab[j] for j in idxs]
    filler = [vocab[j] for j in range(vocab_size) if j not in taken]

    def filler_tokens(n: int) -> list[str]:
        return [filler[int(j)] for j in rng.integers(0, len(filler), size=n)]

    articles = []
    for code in codes:
        trig = triggers[code]
        first = tuple(trig + filler_tokens(3))
        second = tuple(filler_tokens(2) + trig[:2] + filler_tokens(2))
        articles.append(ArticleText(id=code, sentences=(first, second)))

    allege_p = {
        code: max(_MIN_ALLEGE_P, _BASE_ALLEGE_P * (_ALLEGE_DECAY ** i))
        for i, code in enumerate(codes)
    }

    docs = []
    for d in range(num_docs):
        alleged = frozenset(
            code for code in codes if rng.random() < allege_p[code]
        )
        violated = frozenset(
            code for code in alleged if rng.random() < _VIOLATED_GIVEN_ALLEGED
        )
        sents: list[tuple[str, ...]] = [
            tuple(filler_tokens(int(rng.integers(5, 9))))
            for _ in range(int(rng.integers(2, 5)))
        ]
        for code in sorted(alleged):
            if rng.random() < planted_rule_strength:
                toks = [ALLEGE_MARKER] + list(triggers[code]) + filler_tokens(2)
                if code in violated:
                    toks.append(VIOLATION_MARKER)
                pos = int(rng.integers(0, len(sents) + 1))
                sents.insert(pos, tuple(toks))
        # Pad to a uniform sentence count so same-shape documents batch well.
        while len(sents) < _DOC_SENTENCES:
            sents.append(tuple(filler_tokens(int(rng.integers(5, 9)))))
        docs.append(Document(
            doc_id=f"case{d:05d}",
            sentences=tuple(sents),
            date=f"20{10 + d % 10:02d}-{1 + d % 12:02d}-{1 + d % 28:02d}",
            alleged=alleged,
            violated=violated,
        ))
    return docs, articles


def write_corpus_jsonl(docs: Sequence[Document], path: str | Path) -> None:
    """Write documents in the native JSONL format (UTF-8, LF)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            rec = {
                "doc_id": doc.doc_id,
                "date": doc.date,
                "sentences": [list(s) for s in doc.sentences],
                "alleged": sorted(doc.alleged),
                "violated": sorted(doc.violated),
            }
            fh.write(json.dumps(rec) + "\n")


def write_articles_jsonl(articles: Sequence[ArticleText], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for art in articles:
            rec = {"id": art.id, "sentences": [list(s) for s in art.sentences]}
            fh.write(json.dumps(rec) + "\n")

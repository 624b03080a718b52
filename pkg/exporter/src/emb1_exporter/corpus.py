"""Native corpus JSONL reading with the shared truncation contract:
the first 50 sentences of a document, the first 256 input tokens of a
sentence."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

MAX_SENTENCES = 50
MAX_TOKENS = 256


class CorpusFormatError(ValueError):
    pass


@dataclass
class TextItem:
    ident: str
    sentences: list[list[str]]


def _truncate(sentences: list[list[str]], max_sentences: int,
              max_tokens: int) -> list[list[str]]:
    return [s[:max_tokens] for s in sentences[:max_sentences]]


def _read_jsonl(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(
                    f"{path}: line {line_no}: not valid JSON") from exc


def load_documents(path: str | Path, max_sentences: int = MAX_SENTENCES,
                   max_tokens: int = MAX_TOKENS) -> list[TextItem]:
    items = []
    for line_no, rec in _read_jsonl(Path(path)):
        try:
            ident = str(rec["doc_id"])
            sentences = [[str(t) for t in s] for s in rec["sentences"] if s]
        except (KeyError, TypeError) as exc:
            raise CorpusFormatError(
                f"{path}: line {line_no}: bad record ({exc})") from exc
        if not sentences:
            raise CorpusFormatError(
                f"{path}: line {line_no}: document has no sentences")
        items.append(TextItem(ident, _truncate(sentences, max_sentences,
                                               max_tokens)))
    return items


def load_articles(path: str | Path, max_sentences: int = MAX_SENTENCES,
                  max_tokens: int = MAX_TOKENS) -> list[TextItem]:
    items = []
    for line_no, rec in _read_jsonl(Path(path)):
        try:
            ident = str(rec["id"])
            sentences = [[str(t) for t in s] for s in rec["sentences"] if s]
        except (KeyError, TypeError) as exc:
            raise CorpusFormatError(
                f"{path}: line {line_no}: bad record ({exc})") from exc
        if not sentences:
            raise CorpusFormatError(
                f"{path}: line {line_no}: article has no sentences")
        items.append(TextItem(ident, _truncate(sentences, max_sentences,
                                               max_tokens)))
    return items

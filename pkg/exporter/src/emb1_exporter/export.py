"""Run a frozen pretrained encoder sentence-wise over a corpus and write
per-token final-hidden-layer embeddings as EMB1.

The encoder applies its own subword tokenization to each (whitespace
re-joined) sentence; the stored sentence length is the subword count,
special tokens included, capped at the token limit. Weights are never
updated, inference is single-threaded and deterministic, so repeated
exports are numerically identical.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .corpus import MAX_SENTENCES, MAX_TOKENS, TextItem, load_articles, load_documents
from .emb1 import Entry, KIND_ARTICLE, KIND_DOCUMENT, write_emb1


class ExportError(ValueError):
    pass


@dataclass
class ExportJob:
    corpus_path: str
    article_path: str
    encoder: str              # model id or local directory
    output_path: str
    max_tokens: int = MAX_TOKENS
    max_sentences: int = MAX_SENTENCES
    batch_size: int = 16
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.max_tokens < 1 or self.max_sentences < 1:
            raise ExportError("limits must be positive")
        if self.batch_size < 1:
            raise ExportError("batch_size must be positive")


class FrozenEncoder:
    """A pretrained transformer in inference mode; emits one [subwords, dim]
    array per sentence."""

    def __init__(self, name_or_path: str, max_tokens: int, device: str = "cpu"):
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise ExportError(
                "the transformers package is required to run an encoder"
            ) from exc
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(name_or_path)
            self.model = AutoModel.from_pretrained(name_or_path)
        except OSError as exc:
            raise ExportError(
                f"encoder {name_or_path!r} not available locally: {exc}"
            ) from exc
        self.model.eval()
        self.model.to(device)
        for p in self.model.parameters():
            p.requires_grad_(False)
        # Respect the encoder's own positional capacity when it is tighter
        # than the requested limit.
        capacity = getattr(self.model.config, "max_position_embeddings", None)
        self.max_tokens = (min(max_tokens, int(capacity))
                           if capacity else max_tokens)
        self.device = device
        self.dim = int(self.model.config.hidden_size)

    @torch.no_grad()
    def encode_sentences(self, sentences: Sequence[str]) -> list[np.ndarray]:
        """Encode a batch of sentence strings; each result keeps every
        non-padding output position (special tokens included)."""
        batch = self.tokenizer(
            list(sentences), padding=True, truncation=True,
            max_length=self.max_tokens, return_tensors="pt")
        batch = {k: v.to(self.device) for k, v in batch.items()}
        hidden = self.model(**batch).last_hidden_state
        lengths = batch["attention_mask"].sum(dim=1)
        return [
            hidden[i, :int(lengths[i])].cpu().numpy().astype(np.float32)
            for i in range(hidden.shape[0])
        ]


def _encode_items(items: Sequence[TextItem], kind: int, encoder: FrozenEncoder,
                  job: ExportJob, warn=lambda msg: print(msg, file=sys.stderr)
                  ) -> list[Entry]:
    entries = []
    pending: list[tuple[int, int, str]] = []  # (item index, sentence index, text)
    sentence_store: dict[int, dict[int, np.ndarray]] = {}

    for idx, item in enumerate(items):
        sentence_store[idx] = {}
        for s_idx, tokens in enumerate(item.sentences):
            text = " ".join(tokens)
            if len(encoder.tokenizer.tokenize(text)) > encoder.max_tokens - 2:
                warn(f"warning: {item.ident!r} sentence {s_idx} exceeds the "
                     f"encoder token limit ({encoder.max_tokens}); truncating")
            pending.append((idx, s_idx, text))

    for start in range(0, len(pending), job.batch_size):
        chunk = pending[start:start + job.batch_size]
        encoded = encoder.encode_sentences([text for _, _, text in chunk])
        for (idx, s_idx, _), arr in zip(chunk, encoded):
            sentence_store[idx][s_idx] = arr

    for idx, item in enumerate(items):
        sentences = [sentence_store[idx][i] for i in range(len(item.sentences))]
        entries.append(Entry(ident=item.ident, kind=kind, sentences=sentences))
    return entries


def export(job: ExportJob) -> int:
    """Encode the corpus and companion article file into `job.output_path`.
    Returns the number of entries written."""
    torch.set_num_threads(1)
    docs = load_documents(job.corpus_path, job.max_sentences, job.max_tokens)
    articles = load_articles(job.article_path, job.max_sentences,
                             job.max_tokens)
    if not docs and not articles:
        raise ExportError("nothing to export")
    encoder = FrozenEncoder(job.encoder, job.max_tokens, job.device)
    entries = _encode_items(docs, KIND_DOCUMENT, encoder, job)
    entries += _encode_items(articles, KIND_ARTICLE, encoder, job)
    try:
        write_emb1(entries, encoder.dim, job.output_path)
    except OSError as exc:
        raise ExportError(f"cannot write {job.output_path}: {exc}") from exc
    return len(entries)

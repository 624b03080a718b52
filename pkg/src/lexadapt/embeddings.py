"""Frozen per-token embeddings: the EMB1 interchange format and a toy encoder.

The model never sees raw text; its only view of a document or article is an
EmbeddingTensor of per-token vectors produced by a frozen encoder. The EMB1
binary format decouples encoder execution (an offline exporter) from
training. The toy encoder here maps every token string to a deterministic
hash-seeded unit vector so the whole system is testable without any
pretrained encoder.

EMB1 layout (all integers little-endian):

    magic   4 bytes  b"EMB1"
    version u16      1
    dim     u32      embedding width d
    count   u32      number of entries
    entry:
        id_len  u16
        id      id_len bytes, UTF-8
        kind    u8   0 = document, 1 = article
        m       u16  sentence count
        lengths m x u16
        payload sum(lengths) * d * f32, sentences concatenated in order

No padding is stored on disk; in memory each entry is padded to its longest
sentence with zeros.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import MAX_SENTENCES, MAX_TOKENS, ArticleText, Document

MAGIC = b"EMB1"
VERSION = 1

KIND_DOCUMENT = 0
KIND_ARTICLE = 1


class StoreError(ValueError):
    """Raised for malformed EMB1 files or inconsistent stores."""


@dataclass
class EmbeddingTensor:
    """Token embeddings for one document or article.

    `values` has shape [m, n_max, d]; positions beyond `sentence_lengths[i]`
    in row i are zero. All values are finite.
    """

    doc_id: str
    values: np.ndarray
    sentence_lengths: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        self.sentence_lengths = np.asarray(self.sentence_lengths, dtype=np.int64)
        m, n, d = self.values.shape
        if m != len(self.sentence_lengths):
            raise StoreError(f"{self.doc_id!r}: sentence count mismatch")
        if m == 0 or d <= 0:
            raise StoreError(f"{self.doc_id!r}: empty tensor")
        if m > MAX_SENTENCES:
            raise StoreError(f"{self.doc_id!r}: {m} sentences exceeds {MAX_SENTENCES}")
        if self.sentence_lengths.min() < 1:
            raise StoreError(f"{self.doc_id!r}: zero-length sentence")
        if self.sentence_lengths.max() > min(n, MAX_TOKENS):
            raise StoreError(f"{self.doc_id!r}: sentence length exceeds limit")
        if not np.isfinite(self.values).all():
            raise StoreError(f"non-finite embedding in {self.doc_id!r}")

    @property
    def num_sentences(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def token_mask(self) -> np.ndarray:
        """Boolean [m, n_max] mask of real token positions."""
        n = self.values.shape[1]
        return np.arange(n)[None, :] < self.sentence_lengths[:, None]


@dataclass
class EmbeddingStore:
    """Uniform-dimension collections of document and article tensors."""

    dim: int
    documents: dict[str, EmbeddingTensor] = field(default_factory=dict)
    articles: dict[str, EmbeddingTensor] = field(default_factory=dict)

    def add(self, tensor: EmbeddingTensor, kind: int) -> None:
        if tensor.dim != self.dim:
            raise StoreError(
                f"{tensor.doc_id!r}: dim {tensor.dim} != store dim {self.dim}"
            )
        table = self.documents if kind == KIND_DOCUMENT else self.articles
        if tensor.doc_id in table:
            raise StoreError(f"duplicate id {tensor.doc_id!r}")
        table[tensor.doc_id] = tensor

    def document(self, doc_id: str) -> EmbeddingTensor:
        try:
            return self.documents[doc_id]
        except KeyError:
            raise StoreError(f"no embedding for document {doc_id!r}") from None

    def article(self, code: str) -> EmbeddingTensor:
        try:
            return self.articles[code]
        except KeyError:
            raise StoreError(f"no embedding for article {code!r}") from None

    def __len__(self) -> int:
        return len(self.documents) + len(self.articles)


def write_store(store: EmbeddingStore, path: str | Path) -> None:
    """Serialize a store to the EMB1 format. Round-trips bit-exactly."""
    if len(store) == 0:
        raise StoreError("refusing to write an empty store")
    entries = [(KIND_DOCUMENT, t) for t in store.documents.values()]
    entries += [(KIND_ARTICLE, t) for t in store.articles.values()]
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<HII", VERSION, store.dim, len(entries)))
            for kind, t in entries:
                ident = t.doc_id.encode("utf-8")
                lengths = t.sentence_lengths
                fh.write(struct.pack("<H", len(ident)))
                fh.write(ident)
                fh.write(struct.pack("<BH", kind, t.num_sentences))
                fh.write(np.asarray(lengths, dtype="<u2").tobytes())
                for i, ln in enumerate(lengths):
                    fh.write(np.ascontiguousarray(
                        t.values[i, :ln, :], dtype="<f4").tobytes())
    except OSError as exc:
        raise StoreError(f"cannot write store to {path}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise StoreError(f"{self.path}: unexpected EOF")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_store(path: str | Path) -> EmbeddingStore:
    """Read and validate an EMB1 file."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise StoreError(f"cannot read store from {path}: {exc}") from exc
    r = _Reader(data, str(path))
    if r.take(4) != MAGIC:
        raise StoreError(f"{path}: not an EMB1 file")
    version, dim, count = r.unpack("<HII")
    if version != VERSION:
        raise StoreError(f"{path}: unsupported EMB1 version {version}")
    if dim <= 0:
        raise StoreError(f"{path}: invalid dim {dim}")
    store = EmbeddingStore(dim=int(dim))
    for _ in range(count):
        (id_len,) = r.unpack("<H")
        ident = r.take(id_len).decode("utf-8")
        kind, m = r.unpack("<BH")
        if kind not in (KIND_DOCUMENT, KIND_ARTICLE):
            raise StoreError(f"{path}: entry {ident!r} has unknown kind {kind}")
        if m == 0:
            raise StoreError(f"{path}: entry {ident!r} has no sentences")
        lengths = np.frombuffer(r.take(2 * m), dtype="<u2").astype(np.int64)
        n_max = int(lengths.max())
        values = np.zeros((m, n_max, dim), dtype=np.float32)
        for i, ln in enumerate(lengths):
            flat = np.frombuffer(r.take(int(ln) * dim * 4), dtype="<f4")
            values[i, :ln, :] = flat.reshape(int(ln), dim)
        if not np.isfinite(values).all():
            raise StoreError(f"{path}: non-finite embedding in entry {ident!r}")
        store.add(EmbeddingTensor(ident, values, lengths), kind)
    if r.pos != len(data):
        raise StoreError(f"{path}: {len(data) - r.pos} trailing bytes")
    return store


# ---------------------------------------------------------------------------
# Toy encoder
# ---------------------------------------------------------------------------

def token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic unit vector for one token: a hash of (token, seed)
    seeds a PCG64 stream that draws the vector. Pure function of its inputs."""
    digest = hashlib.blake2b(
        f"{seed}\x1f{token}".encode("utf-8"), digest_size=16
    ).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    v = rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


def toy_encode(item: Document | ArticleText, dim: int, seed: int) -> EmbeddingTensor:
    """Encode a document or article with hash-seeded unit token vectors."""
    if dim < 8:
        raise StoreError(f"toy encoder dim must be >= 8, got {dim}")
    ident = item.doc_id if isinstance(item, Document) else item.id
    sents = item.sentences
    lengths = np.array([len(s) for s in sents], dtype=np.int64)
    values = np.zeros((len(sents), int(lengths.max()), dim), dtype=np.float32)
    for i, sent in enumerate(sents):
        for t, tok in enumerate(sent):
            values[i, t, :] = token_vector(tok, dim, seed)
    return EmbeddingTensor(ident, values, lengths)


def toy_encode_corpus(
    docs: Sequence[Document],
    articles: Sequence[ArticleText],
    dim: int,
    seed: int,
) -> EmbeddingStore:
    """Toy-encode a whole corpus into a store."""
    store = EmbeddingStore(dim=dim)
    for doc in docs:
        store.add(toy_encode(doc, dim, seed), KIND_DOCUMENT)
    for art in articles:
        store.add(toy_encode(art, dim, seed), KIND_ARTICLE)
    return store

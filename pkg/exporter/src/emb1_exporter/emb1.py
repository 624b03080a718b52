"""Standalone EMB1 writer.

EMB1 is the binary interchange format for frozen per-token embeddings
(little-endian throughout): magic "EMB1", version u16=1, dim u32, entry
count u32; per entry an id (u16 length + UTF-8 bytes), kind u8
(0=document, 1=article), sentence count u16, that many u16 sentence
lengths, then the float32 payload, sentences concatenated in order with no
padding on disk.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"EMB1"
VERSION = 1
KIND_DOCUMENT = 0
KIND_ARTICLE = 1


class Emb1Error(ValueError):
    pass


@dataclass
class Entry:
    """One document or article: a list of [length_i, dim] float32 arrays."""

    ident: str
    kind: int
    sentences: list[np.ndarray]

    def validate(self, dim: int) -> None:
        if not self.sentences:
            raise Emb1Error(f"{self.ident!r}: no sentences")
        for i, s in enumerate(self.sentences):
            if s.ndim != 2 or s.shape[1] != dim:
                raise Emb1Error(f"{self.ident!r}: sentence {i} has shape "
                                f"{s.shape}, want [*, {dim}]")
            if s.shape[0] < 1:
                raise Emb1Error(f"{self.ident!r}: empty sentence {i}")
            if not np.isfinite(s).all():
                raise Emb1Error(f"{self.ident!r}: non-finite values")


def write_emb1(entries: Sequence[Entry], dim: int, path: str | Path) -> None:
    if not entries:
        raise Emb1Error("refusing to write an empty store")
    for entry in entries:
        entry.validate(dim)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HII", VERSION, dim, len(entries)))
        for entry in entries:
            ident = entry.ident.encode("utf-8")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<BH", entry.kind, len(entry.sentences)))
            lengths = np.array([s.shape[0] for s in entry.sentences],
                               dtype="<u2")
            fh.write(lengths.tobytes())
            for s in entry.sentences:
                fh.write(np.ascontiguousarray(s, dtype="<f4").tobytes())

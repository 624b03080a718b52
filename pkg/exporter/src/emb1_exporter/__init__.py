"""Offline frozen-encoder token embedding exporter (EMB1 format)."""

from .emb1 import Entry, KIND_ARTICLE, KIND_DOCUMENT, write_emb1
from .export import ExportJob, FrozenEncoder, export

__version__ = "0.1.0"

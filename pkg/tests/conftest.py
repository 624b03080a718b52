import numpy as np
import pytest
import torch

torch.set_num_threads(1)

from lexadapt.corpus import Document
from lexadapt.embeddings import EmbeddingTensor
from lexadapt.model import ModelConfig


@pytest.fixture
def toy_config():
    """The toy model geometry used throughout the unit tests."""
    return ModelConfig(d_in=8, d_att_token=4, h_gru=4, d_att_sent=4,
                       d_cls_hidden=4, dropout=0.0)


def random_embedding(doc_id, sentence_lengths, dim, seed):
    rng = np.random.default_rng(seed)
    lengths = np.asarray(sentence_lengths)
    values = np.zeros((len(lengths), int(lengths.max()), dim), dtype=np.float32)
    for i, ln in enumerate(lengths):
        values[i, :ln, :] = rng.standard_normal((ln, dim)).astype(np.float32)
    return EmbeddingTensor(doc_id, values, lengths)


@pytest.fixture
def pair_inputs():
    """One (fact, article) embedding pair at the toy geometry: m=3, k=2."""
    fact = random_embedding("doc", [4, 2, 3], dim=8, seed=0)
    article = random_embedding("art", [3, 4], dim=8, seed=1)
    return fact, article


def make_doc(doc_id="d0", sentences=(("a", "b"), ("c",)), alleged=(),
             violated=(), date="2010-01-01"):
    return Document(doc_id=doc_id,
                    sentences=tuple(tuple(s) for s in sentences),
                    date=date, alleged=frozenset(alleged),
                    violated=frozenset(violated))

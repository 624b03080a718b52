"""Article-aware outcome prediction network and the fact-only baseline.

The article-aware model reads a (case, article) pair as two hierarchies of
frozen token embeddings and outputs the probability of a positive outcome.
Pipeline per side: token attention pools tokens into sentence vectors, a
bidirectional GRU contextualizes sentences, dot-product attention between
the two sentence sequences aligns them, the pre/post-interaction vectors
are merged (concat, difference, product), projected, and re-encoded with a
second bidirectional GRU. The article side pools to a single vector first;
that vector initializes the fact side's second GRU (conditional encoding)
so fact salience becomes article-dependent. Sentence attention pools the
fact side into the pair feature vector that the classifier head and any
domain adversary consume.

The fact-only baseline drops the article side and interaction entirely and
predicts one probability per candidate article from the fact encoding.

All modules run in float32 for training and float64 for gradient
verification; randomness (dropout) is drawn from explicitly passed
generators so behaviour is a pure function of (parameters, inputs, rng
state).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import torch
from torch import Tensor, nn

from .embeddings import EmbeddingTensor


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Sizes for the prediction network. Defaults are the full-scale ones;
    tests and synthetic experiments shrink them."""

    d_in: int
    d_att_token: int = 300
    h_gru: int = 200
    d_att_sent: int = 200
    d_cls_hidden: int = 200
    dropout: float = 0.1
    max_sentences: int = 50
    max_tokens: int = 256

    def __post_init__(self) -> None:
        sizes = (self.d_in, self.d_att_token, self.h_gru, self.d_att_sent,
                 self.d_cls_hidden, self.max_sentences, self.max_tokens)
        if any(s <= 0 for s in sizes):
            raise ModelError("all config sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError("dropout must be in [0, 1)")

    @property
    def width(self) -> int:
        """Bidirectional GRU output width."""
        return 2 * self.h_gru


@dataclass
class EncodedInput:
    """A padded token-embedding block ready for the network."""

    values: Tensor  # [m, n, d]
    mask: Tensor    # [m, n] bool


def encode_input(emb: EmbeddingTensor, dtype: torch.dtype = torch.float32) -> EncodedInput:
    values = torch.from_numpy(np.ascontiguousarray(emb.values)).to(dtype)
    mask = torch.from_numpy(emb.token_mask())
    return EncodedInput(values=values, mask=mask)


def _as_encoded(x: Union[EmbeddingTensor, EncodedInput],
                dtype: torch.dtype) -> EncodedInput:
    if isinstance(x, EncodedInput):
        return x
    return encode_input(x, dtype)


def masked_softmax(scores: Tensor, mask: Optional[Tensor]) -> Tensor:
    """Softmax over the last axis with exact zeros on masked positions."""
    if mask is None:
        return torch.softmax(scores, dim=-1)
    if not mask.any(dim=-1).all():
        raise ModelError("softmax row with every position masked")
    filled = scores.masked_fill(~mask, -1e9)
    weights = torch.softmax(filled, dim=-1)
    weights = weights * mask.to(weights.dtype)
    return weights / weights.sum(dim=-1, keepdim=True)


def dropout(x: Tensor, p: float, train_mode: bool,
            rng: Optional[torch.Generator]) -> Tensor:
    """Inverted dropout driven by an explicit generator."""
    if not train_mode or p <= 0.0:
        return x
    keep = (torch.rand(x.shape, generator=rng, dtype=x.dtype,
                       device=x.device) >= p).to(x.dtype)
    return x * keep / (1.0 - p)


class AttentionPool(nn.Module):
    """Additive attention pooling: tanh projection scored against a learned
    context vector, masked softmax, weighted sum. Used at the token level
    and (without mask) at the sentence level."""

    def __init__(self, d_in: int, d_att: int):
        super().__init__()
        self.proj = nn.Linear(d_in, d_att)
        context = torch.randn(d_att)
        self.context = nn.Parameter(context / context.norm())

    def forward(self, x: Tensor, mask: Optional[Tensor] = None
                ) -> tuple[Tensor, Tensor]:
        """x: [..., L, d] -> (pooled [..., d], weights [..., L])."""
        hidden = torch.tanh(self.proj(x))
        scores = hidden @ self.context
        weights = masked_softmax(scores, mask)
        pooled = (weights.unsqueeze(-1) * x).sum(dim=-2)
        return pooled, weights


def interaction(fact_states: Tensor, article_states: Tensor
                ) -> tuple[Tensor, Tensor, Tensor]:
    """Dot-product cross attention between two sentence sequences.

    Accepts [m, D] x [k, D] or batched [B, m, D] x [B, k, D]. Returns
    (scores, fact_aligned, article_aligned): each fact sentence is rewritten
    as a convex combination of article sentences and vice versa.
    """
    scores = fact_states @ article_states.transpose(-1, -2)  # [..., m, k]
    fact_aligned = torch.softmax(scores, dim=-1) @ article_states
    article_aligned = torch.softmax(scores, dim=-2).transpose(-1, -2) @ fact_states
    return scores, fact_aligned, article_aligned


def enrich(states: Tensor, aligned: Tensor) -> Tensor:
    """Merge pre- and post-interaction vectors: [v, v', v - v', v * v']."""
    if states.shape != aligned.shape:
        raise ModelError("enrich inputs must have identical shapes")
    return torch.cat(
        [states, aligned, states - aligned, states * aligned], dim=-1)


def _bi_gru(gru: nn.GRU, seq: Tensor, h0: Optional[Tensor] = None) -> Tensor:
    """Run a bidirectional GRU over [B, L, d_in] -> [B, L, 2h]."""
    out, _ = gru(seq.transpose(0, 1), h0)
    return out.transpose(0, 1)


def init_parameters(module: nn.Module, generator: torch.Generator) -> None:
    """Seeded init: symmetric uniform for weight matrices with bound
    sqrt(6 / (fan_in + fan_out)), zeros for biases, unit random vectors for
    attention contexts."""
    with torch.no_grad():
        for name, param in module.named_parameters():
            if name.endswith("context"):
                v = torch.empty_like(param).normal_(generator=generator)
                param.copy_(v / v.norm())
            elif param.dim() >= 2:
                fan_out, fan_in = param.shape[0], param.shape[1]
                bound = (6.0 / (fan_in + fan_out)) ** 0.5
                param.uniform_(-bound, bound, generator=generator)
            else:
                param.zero_()


@dataclass
class ForwardTrace:
    """Intermediate activations of one pair forward, for inspection/tests."""

    token_weights_fact: Tensor      # [m, n]
    token_weights_article: Tensor   # [k, n]
    fact_pooled: Tensor             # [m, d_in]
    article_pooled: Tensor          # [k, d_in]
    fact_states: Tensor             # [m, D]
    article_states: Tensor          # [k, D]
    scores: Tensor                  # [m, k]
    fact_aligned: Tensor            # [m, D]
    article_aligned: Tensor         # [k, D]
    fact_enriched: Tensor           # [m, 4D]
    article_enriched: Tensor        # [k, 4D]
    sentence_weights_article: Tensor  # [k]
    sentence_weights_fact: Tensor   # [m]
    article_repr: Tensor            # [D]
    fact_repr: Tensor               # [D]
    prob: Tensor                    # scalar


class ArticleAwareModel(nn.Module):
    """The (case, article) pair scorer.

    Parameters are partitioned into the feature extractor (everything that
    produces the pair feature vector) and the classifier head; domain
    adversaries live outside this module.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        d, width = config.d_in, config.width
        self.token_attention = AttentionPool(d, config.d_att_token)
        self.fact_gru = nn.GRU(d, config.h_gru, bidirectional=True)
        self.article_gru = nn.GRU(d, config.h_gru, bidirectional=True)
        self.fact_proj = nn.Linear(4 * width, width)
        self.article_proj = nn.Linear(4 * width, width)
        self.fact_post_gru = nn.GRU(width, config.h_gru, bidirectional=True)
        self.article_post_gru = nn.GRU(width, config.h_gru, bidirectional=True)
        self.condition_fwd = nn.Linear(width, config.h_gru)
        self.condition_bwd = nn.Linear(width, config.h_gru)
        self.fact_sent_attention = AttentionPool(width, config.d_att_sent)
        self.article_sent_attention = AttentionPool(width, config.d_att_sent)
        self.cls_hidden = nn.Linear(width, config.d_cls_hidden)
        self.cls_out = nn.Linear(config.d_cls_hidden, 1)
        gen = torch.Generator().manual_seed(seed)
        init_parameters(self, gen)

    # -- parameter partitions ------------------------------------------------
    CLASSIFIER_PREFIXES = ("cls_hidden.", "cls_out.")

    def partition(self) -> dict[str, list[str]]:
        """Map partition tag -> parameter names. Every parameter belongs to
        exactly one partition."""
        feature, classifier = [], []
        for name, _ in self.named_parameters():
            if name.startswith(self.CLASSIFIER_PREFIXES):
                classifier.append(name)
            else:
                feature.append(name)
        return {"feature": feature, "classifier": classifier}

    def feature_parameters(self):
        names = set(self.partition()["feature"])
        return [p for n, p in self.named_parameters() if n in names]

    def classifier_parameters(self):
        names = set(self.partition()["classifier"])
        return [p for n, p in self.named_parameters() if n in names]

    @property
    def dtype(self) -> torch.dtype:
        return self.cls_out.weight.dtype

    # -- forward -------------------------------------------------------------
    def _pool_tokens(self, enc: EncodedInput, train_mode: bool,
                     rng: Optional[torch.Generator]) -> tuple[Tensor, Tensor]:
        pooled, weights = self.token_attention(enc.values, enc.mask)
        pooled = dropout(pooled, self.config.dropout, train_mode, rng)
        return pooled, weights

    def _encode_batch(self, values: Tensor, mask: Tensor, gru: nn.GRU,
                      train_mode: bool, rng: Optional[torch.Generator]
                      ) -> tuple[Tensor, Tensor, Tensor]:
        """values [B, L, n, d] -> (pooled [B, L, d], weights, states [B, L, D])."""
        pooled, weights = self.token_attention(values, mask)
        pooled = dropout(pooled, self.config.dropout, train_mode, rng)
        states = _bi_gru(gru, pooled)
        states = dropout(states, self.config.dropout, train_mode, rng)
        return pooled, weights, states

    def _forward_block(self, fact: tuple[Tensor, Tensor],
                       article: tuple[Tensor, Tensor],
                       train_mode: bool, rng: Optional[torch.Generator],
                       want_trace: bool) -> tuple[Tensor, Tensor, Optional[ForwardTrace]]:
        """Batched forward over same-shape pairs.

        fact: (values [B, m, n, d], mask [B, m, n]); article likewise with k
        sentences. Returns (probs [B], features [B, D], trace or None).
        """
        p = self.config.dropout
        fact_pooled, fact_w, fact_states = self._encode_batch(
            fact[0], fact[1], self.fact_gru, train_mode, rng)
        art_pooled, art_w, art_states = self._encode_batch(
            article[0], article[1], self.article_gru, train_mode, rng)

        scores, fact_aligned, art_aligned = interaction(fact_states, art_states)

        art_enriched = enrich(art_states, art_aligned)
        art_merged = torch.tanh(self.article_proj(art_enriched))
        art_post = _bi_gru(self.article_post_gru, art_merged)
        art_post = dropout(art_post, p, train_mode, rng)
        article_repr, art_sent_w = self.article_sent_attention(art_post)

        fact_enriched = enrich(fact_states, fact_aligned)
        fact_merged = torch.tanh(self.fact_proj(fact_enriched))
        h0 = torch.stack([self.condition_fwd(article_repr),
                          self.condition_bwd(article_repr)], dim=0)
        fact_post = _bi_gru(self.fact_post_gru, fact_merged, h0)
        fact_post = dropout(fact_post, p, train_mode, rng)
        fact_repr, fact_sent_w = self.fact_sent_attention(fact_post)

        hidden = torch.tanh(self.cls_hidden(fact_repr))
        hidden = dropout(hidden, p, train_mode, rng)
        probs = torch.sigmoid(self.cls_out(hidden)).squeeze(-1)

        trace = None
        if want_trace:
            trace = ForwardTrace(
                token_weights_fact=fact_w[0], token_weights_article=art_w[0],
                fact_pooled=fact_pooled[0], article_pooled=art_pooled[0],
                fact_states=fact_states[0], article_states=art_states[0],
                scores=scores[0], fact_aligned=fact_aligned[0],
                article_aligned=art_aligned[0],
                fact_enriched=fact_enriched[0],
                article_enriched=art_enriched[0],
                sentence_weights_article=art_sent_w[0],
                sentence_weights_fact=fact_sent_w[0],
                article_repr=article_repr[0], fact_repr=fact_repr[0],
                prob=probs[0],
            )
        return probs, fact_repr, trace

    def forward_pair(self, x_emb: Union[EmbeddingTensor, EncodedInput],
                     a_emb: Union[EmbeddingTensor, EncodedInput],
                     train_mode: bool = False,
                     rng: Optional[torch.Generator] = None,
                     ) -> tuple[Tensor, Tensor, ForwardTrace]:
        """Score one pair. Returns (probability, feature vector, trace)."""
        x = _as_encoded(x_emb, self.dtype)
        a = _as_encoded(a_emb, self.dtype)
        if x.values.shape[-1] != a.values.shape[-1]:
            raise ModelError(
                f"embedding dim mismatch: {x.values.shape[-1]} vs {a.values.shape[-1]}")
        if x.values.shape[-1] != self.config.d_in:
            raise ModelError(
                f"embedding dim {x.values.shape[-1]} != config d_in {self.config.d_in}")
        probs, feats, trace = self._forward_block(
            (x.values.unsqueeze(0), x.mask.unsqueeze(0)),
            (a.values.unsqueeze(0), a.mask.unsqueeze(0)),
            train_mode, rng, want_trace=True)
        return probs[0], feats[0], trace

    def forward_pairs(self, pairs: Sequence[tuple], train_mode: bool = False,
                      rng: Optional[torch.Generator] = None
                      ) -> tuple[Tensor, Tensor]:
        """Score a batch of pairs, grouping same-shape pairs for speed.

        Returns (probs [B], features [B, D]) in input order.
        """
        enc = [(_as_encoded(x, self.dtype), _as_encoded(a, self.dtype))
               for x, a in pairs]
        buckets: dict[tuple[int, int], list[int]] = {}
        for i, (x, a) in enumerate(enc):
            buckets.setdefault((x.values.shape[0], a.values.shape[0]), []).append(i)
        probs = [None] * len(enc)
        feats = [None] * len(enc)
        for key in sorted(buckets):
            idxs = buckets[key]
            fact = _stack_side([enc[i][0] for i in idxs])
            art = _stack_side([enc[i][1] for i in idxs])
            p, f, _ = self._forward_block(fact, art, train_mode, rng, False)
            for j, i in enumerate(idxs):
                probs[i] = p[j]
                feats[i] = f[j]
        return torch.stack(probs), torch.stack(feats)


def _stack_side(items: Sequence[EncodedInput]) -> tuple[Tensor, Tensor]:
    """Stack same-sentence-count inputs, padding tokens to the widest."""
    n_max = max(int(e.values.shape[1]) for e in items)
    vals, masks = [], []
    for e in items:
        m, n, d = e.values.shape
        if n < n_max:
            pad_v = e.values.new_zeros(m, n_max - n, d)
            pad_m = e.mask.new_zeros(m, n_max - n)
            vals.append(torch.cat([e.values, pad_v], dim=1))
            masks.append(torch.cat([e.mask, pad_m], dim=1))
        else:
            vals.append(e.values)
            masks.append(e.mask)
    return torch.stack(vals), torch.stack(masks)


class FactOnlyModel(nn.Module):
    """Baseline: encode the facts alone and emit one probability per
    candidate article (multi-hot target)."""

    def __init__(self, config: ModelConfig, n_classes: int, seed: int = 0):
        super().__init__()
        if n_classes <= 0:
            raise ModelError("n_classes must be positive")
        self.config = config
        self.n_classes = n_classes
        d, width = config.d_in, config.width
        self.token_attention = AttentionPool(d, config.d_att_token)
        self.fact_gru = nn.GRU(d, config.h_gru, bidirectional=True)
        self.sent_attention = AttentionPool(width, config.d_att_sent)
        self.cls_hidden = nn.Linear(width, config.d_cls_hidden)
        self.cls_out = nn.Linear(config.d_cls_hidden, n_classes)
        gen = torch.Generator().manual_seed(seed)
        init_parameters(self, gen)

    CLASSIFIER_PREFIXES = ("cls_hidden.", "cls_out.")

    def partition(self) -> dict[str, list[str]]:
        feature, classifier = [], []
        for name, _ in self.named_parameters():
            (classifier if name.startswith(self.CLASSIFIER_PREFIXES) else feature
             ).append(name)
        return {"feature": feature, "classifier": classifier}

    @property
    def dtype(self) -> torch.dtype:
        return self.cls_out.weight.dtype

    def _forward_block(self, values: Tensor, mask: Tensor, train_mode: bool,
                       rng: Optional[torch.Generator]) -> Tensor:
        p = self.config.dropout
        pooled, _ = self.token_attention(values, mask)
        pooled = dropout(pooled, p, train_mode, rng)
        states = _bi_gru(self.fact_gru, pooled)
        states = dropout(states, p, train_mode, rng)
        doc_repr, _ = self.sent_attention(states)
        hidden = torch.tanh(self.cls_hidden(doc_repr))
        hidden = dropout(hidden, p, train_mode, rng)
        return torch.sigmoid(self.cls_out(hidden))

    def forward_doc(self, x_emb: Union[EmbeddingTensor, EncodedInput],
                    train_mode: bool = False,
                    rng: Optional[torch.Generator] = None) -> Tensor:
        """One document -> [n_classes] probabilities."""
        x = _as_encoded(x_emb, self.dtype)
        return self._forward_block(
            x.values.unsqueeze(0), x.mask.unsqueeze(0), train_mode, rng)[0]

    def forward_docs(self, docs: Sequence, train_mode: bool = False,
                     rng: Optional[torch.Generator] = None) -> Tensor:
        """Batch of documents -> [B, n_classes], bucketing by sentence count."""
        enc = [_as_encoded(x, self.dtype) for x in docs]
        buckets: dict[int, list[int]] = {}
        for i, e in enumerate(enc):
            buckets.setdefault(int(e.values.shape[0]), []).append(i)
        out = [None] * len(enc)
        for key in sorted(buckets):
            idxs = buckets[key]
            values, mask = _stack_side([enc[i] for i in idxs])
            probs = self._forward_block(values, mask, train_mode, rng)
            for j, i in enumerate(idxs):
                out[i] = probs[j]
        return torch.stack(out)


def gradients(loss: Tensor, module: nn.Module,
              extra: Optional[nn.Module] = None) -> dict[str, Tensor]:
    """Exact gradients of a scalar loss for every named parameter.

    Parameters the loss does not reach get zero gradients. Raises on a
    non-finite loss.
    """
    if loss.dim() != 0:
        raise ModelError("loss must be a scalar")
    if not torch.isfinite(loss):
        raise ModelError(f"non-finite loss: {loss.item()!r}")
    named = list(module.named_parameters())
    if extra is not None:
        named += [(f"adversary.{n}", p) for n, p in extra.named_parameters()]
    params = [p for _, p in named]
    if loss.requires_grad:
        grads = torch.autograd.grad(loss, params, allow_unused=True)
    else:
        grads = [None] * len(params)
    return {
        name: (g.detach().clone() if g is not None else torch.zeros_like(p))
        for (name, p), g in zip(named, grads)
    }

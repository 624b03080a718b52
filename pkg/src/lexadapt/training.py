"""Training harness: balanced batch sampler, combined objective, Adam loop,
plateau learning-rate decay, checkpointing, and the baseline paths.

One training run is a deterministic function of (config, pools, embedding
store): parameter init, dropout and sampling all draw from explicit seeded
generators whose states are checkpointed, so a resumed run reproduces the
uninterrupted one bit for bit.
"""

from __future__ import annotations

import base64
import copy
import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .adaptation import (
    Adversary,
    clip_critic,
    discriminator_loss,
    lambda_schedule,
    wasserstein_loss,
    wasserstein_loss_macro,
)
from .corpus import PairInstance
from .embeddings import EmbeddingStore
from .model import (
    ArticleAwareModel,
    EncodedInput,
    FactOnlyModel,
    ModelConfig,
    encode_input,
)

BCE_EPS = 1e-7

ADVERSARY_HIDDEN = (200, 100)


class TrainError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run needs beyond the data itself."""

    model: ModelConfig
    task: str = "B"
    variant: str = "article_aware"   # article_aware | fact_only
    adaptation: str = "none"         # none | discriminator | wasserstein
    regime: str = "NONE"             # NONE | UDA | ADA
    candidate_articles: tuple[str, ...] = ()
    batch_size: int = 16
    articles_per_batch: int = 4
    pos_per_article: int = 2
    neg_per_article: int = 2
    gamma: float = 0.1
    clip_c: float = 0.01
    uda_macro_pairing: bool = False
    adversary_hidden: tuple[int, int] = ADVERSARY_HIDDEN
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    max_epochs: int = 30
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.task not in ("A", "B"):
            raise TrainError(f"unknown task {self.task!r}")
        if self.variant not in ("article_aware", "fact_only"):
            raise TrainError(f"unknown variant {self.variant!r}")
        if self.adaptation not in ("none", "discriminator", "wasserstein"):
            raise TrainError(f"unknown adaptation {self.adaptation!r}")
        if self.regime not in ("NONE", "UDA", "ADA"):
            raise TrainError(f"unknown regime {self.regime!r}")
        if (self.adaptation == "none") != (self.regime == "NONE"):
            raise TrainError("adaptation=none iff regime=NONE")
        if self.variant == "fact_only" and self.adaptation != "none":
            raise TrainError("fact_only variant has no article domains to adapt")
        per_article = self.pos_per_article + self.neg_per_article
        if self.articles_per_batch * per_article != self.batch_size:
            raise TrainError(
                f"batch arithmetic inconsistent: {self.articles_per_batch} x "
                f"{per_article} != {self.batch_size}")
        if self.lr <= 0 or self.max_epochs <= 0:
            raise TrainError("lr and max_epochs must be positive")


@dataclass(frozen=True)
class FactInstance:
    """One document with its multi-hot target over the candidate articles."""

    doc_ref: str
    labels: tuple[int, ...]


def build_fact_instances(docs, task: str,
                         candidate_articles: Sequence[str]) -> list[FactInstance]:
    out = []
    for doc in docs:
        gold = doc.violated if task == "A" else doc.alleged
        out.append(FactInstance(
            doc_ref=doc.doc_id,
            labels=tuple(int(c in gold) for c in candidate_articles)))
    return out


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

class _Cycle:
    """Epoch-scoped no-replacement draw over `count` indices; reshuffles
    when exhausted, so scarce buckets fall back to replacement."""

    def __init__(self, count: int, rng: np.random.Generator):
        if count < 1:
            raise TrainError("empty bucket")
        self.count = count
        self.rng = rng
        self.pending: list[int] = []

    def draw(self) -> int:
        if not self.pending:
            self.pending = [int(i) for i in self.rng.permutation(self.count)]
        return self.pending.pop()


class BalancedPairSampler:
    """Every batch holds `articles_per_batch` distinct articles with exactly
    `pos_per_article` positive and `neg_per_article` negative pairs each."""

    def __init__(self, pool: Sequence[PairInstance], articles_per_batch: int,
                 pos_per_article: int, neg_per_article: int,
                 rng: np.random.Generator):
        self.pool = list(pool)
        self.rng = rng
        self.articles_per_batch = articles_per_batch
        self.pos_per_article = pos_per_article
        self.neg_per_article = neg_per_article
        pos: dict[str, list[int]] = {}
        neg: dict[str, list[int]] = {}
        for i, pair in enumerate(self.pool):
            if pair.label is None:
                raise TrainError("labeled sampler got an unlabeled pair")
            (pos if pair.label == 1 else neg).setdefault(pair.article, []).append(i)
        self.pos, self.neg = pos, neg
        self.articles = sorted(set(pos) & set(neg))
        if len(self.articles) < articles_per_batch:
            raise TrainError(
                f"pool covers {len(self.articles)} articles with both positive "
                f"and negative pairs; need at least {articles_per_batch}")
        self.cycles = {
            (code, sign): _Cycle(len(bucket[code]), rng)
            for sign, bucket in (("pos", pos), ("neg", neg))
            for code in self.articles
        }

    def sample(self) -> list[PairInstance]:
        picked = self.rng.choice(len(self.articles),
                                 size=self.articles_per_batch, replace=False)
        batch = []
        for a in sorted(int(i) for i in picked):
            code = self.articles[a]
            for _ in range(self.pos_per_article):
                batch.append(self.pool[self.pos[code][self.cycles[(code, "pos")].draw()]])
            for _ in range(self.neg_per_article):
                batch.append(self.pool[self.neg[code][self.cycles[(code, "neg")].draw()]])
        return batch

    def state_dict(self) -> dict:
        return {f"{code}|{sign}": list(self.cycles[(code, sign)].pending)
                for (code, sign) in self.cycles}

    def load_state(self, state: dict) -> None:
        for key, pending in state.items():
            code, sign = key.rsplit("|", 1)
            self.cycles[(code, sign)].pending = [int(i) for i in pending]


class UnlabeledPairSampler:
    """Target-side sampler under UDA: distinct articles, a fixed number of
    (unlabeled) pairs per article, no positive/negative structure."""

    def __init__(self, pool: Sequence[PairInstance], articles_per_batch: int,
                 batch_size: int, rng: np.random.Generator):
        self.pool = list(pool)
        self.rng = rng
        self.batch_size = batch_size
        buckets: dict[str, list[int]] = {}
        for i, pair in enumerate(self.pool):
            buckets.setdefault(pair.article, []).append(i)
        self.buckets = buckets
        self.articles = sorted(buckets)
        if not self.articles:
            raise TrainError("target pool is empty")
        self.articles_per_batch = min(articles_per_batch, len(self.articles))
        self.cycles = {
            code: _Cycle(len(buckets[code]), rng) for code in self.articles
        }

    def sample(self) -> list[PairInstance]:
        k = self.articles_per_batch
        picked = self.rng.choice(len(self.articles), size=k, replace=False)
        codes = [self.articles[int(i)] for i in sorted(int(j) for j in picked)]
        counts = [self.batch_size // k] * k
        for i in range(self.batch_size - sum(counts)):
            counts[i] += 1
        batch = []
        for code, count in zip(codes, counts):
            for _ in range(count):
                batch.append(self.pool[self.buckets[code][self.cycles[code].draw()]])
        return batch

    def state_dict(self) -> dict:
        return {code: list(c.pending) for code, c in self.cycles.items()}

    def load_state(self, state: dict) -> None:
        for code, pending in state.items():
            self.cycles[code].pending = [int(i) for i in pending]


class FactDocSampler:
    """Plain shuffled epoch iterator over fact instances."""

    def __init__(self, pool: Sequence[FactInstance], batch_size: int,
                 rng: np.random.Generator):
        if not pool:
            raise TrainError("fact pool is empty")
        self.pool = list(pool)
        self.batch_size = batch_size
        self.cycle = _Cycle(len(self.pool), rng)

    def sample(self) -> list[FactInstance]:
        return [self.pool[self.cycle.draw()] for _ in range(self.batch_size)]

    def state_dict(self) -> dict:
        return {"pending": list(self.cycle.pending)}

    def load_state(self, state: dict) -> None:
        self.cycle.pending = [int(i) for i in state["pending"]]


# ---------------------------------------------------------------------------
# Losses and optimizer
# ---------------------------------------------------------------------------

def classifier_loss(probs: Tensor, targets: Tensor) -> Tensor:
    """Binary cross entropy with an epsilon floor, averaged over every
    emitted probability."""
    p = probs.clamp(BCE_EPS, 1.0 - BCE_EPS)
    t = targets.to(p.dtype)
    return -(t * p.log() + (1.0 - t) * (1.0 - p).log()).mean()


class Adam:
    """Plain Adam with explicitly serializable first/second moments."""

    def __init__(self, named_params: list[tuple[str, Tensor]], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.named_params = named_params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: torch.zeros_like(p) for n, p in named_params}
        self.v = {n: torch.zeros_like(p) for n, p in named_params}

    @torch.no_grad()
    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.named_params:
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name].mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
            v = self.v[name].mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt().add_(self.eps), value=-self.lr)

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.grad = None


# ---------------------------------------------------------------------------
# Train state
# ---------------------------------------------------------------------------

class EncCache:
    """Embedding store -> torch tensors, converted once per id."""

    def __init__(self, store: EmbeddingStore, dtype: torch.dtype = torch.float32):
        self.store = store
        self.dtype = dtype
        self._docs: dict[str, EncodedInput] = {}
        self._arts: dict[str, EncodedInput] = {}

    def doc(self, doc_id: str) -> EncodedInput:
        if doc_id not in self._docs:
            self._docs[doc_id] = encode_input(self.store.document(doc_id), self.dtype)
        return self._docs[doc_id]

    def art(self, code: str) -> EncodedInput:
        if code not in self._arts:
            self._arts[code] = encode_input(self.store.article(code), self.dtype)
        return self._arts[code]

    def pair_inputs(self, pairs: Sequence[PairInstance]):
        return [(self.doc(p.doc_ref), self.art(p.article)) for p in pairs]


@dataclass
class LossBreakdown:
    loss_c: float
    loss_adv: float
    lam: float
    total: float


@dataclass
class TrainState:
    """Everything that evolves during a run; fully checkpointable."""

    config: TrainConfig
    model: nn.Module
    adversary: Optional[Adversary]
    optimizer: Adam
    step: int
    total_steps: int
    lr: float
    epoch: int = 0
    best_val_loss: Optional[float] = None
    epochs_since_best: int = 0
    decays: int = 0
    dropout_rng: torch.Generator = None
    sampler_rng: np.random.Generator = None
    target_rng: np.random.Generator = None
    sampler_state: Optional[dict] = None
    target_sampler_state: Optional[dict] = None
    pool_fp: Optional[str] = None


def _named_training_params(model: nn.Module,
                           adversary: Optional[Adversary]) -> list[tuple[str, Tensor]]:
    named = [(f"model.{n}", p) for n, p in model.named_parameters()]
    if adversary is not None:
        named += [(f"adversary.{n}", p) for n, p in adversary.named_parameters()]
    return named


def init_state(config: TrainConfig, total_steps: int) -> TrainState:
    """Fresh training state: model, adversary (when adapting), Adam, rngs.

    Generators are derived from config.seed with fixed offsets so that the
    presence of the adversary never shifts the model's own init stream.
    """
    if config.variant == "article_aware":
        model = ArticleAwareModel(config.model, seed=config.seed)
    else:
        model = FactOnlyModel(config.model, len(config.candidate_articles),
                              seed=config.seed)
    adversary = None
    if config.adaptation != "none":
        num_domains = len(config.candidate_articles)
        adversary = Adversary(config.model.width, num_domains,
                              hidden=config.adversary_hidden,
                              seed=config.seed + 1)
    optimizer = Adam(_named_training_params(model, adversary), lr=config.lr,
                     beta1=config.adam_beta1, beta2=config.adam_beta2,
                     eps=config.adam_eps)
    state = TrainState(
        config=config, model=model, adversary=adversary, optimizer=optimizer,
        step=0, total_steps=total_steps, lr=config.lr,
        dropout_rng=torch.Generator().manual_seed(config.seed + 3),
        sampler_rng=np.random.default_rng(config.seed + 2),
        target_rng=np.random.default_rng(config.seed + 4),
    )
    return state


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------

def _forward_article_batch(state: TrainState, cache: EncCache,
                           source: Sequence[PairInstance],
                           target: Sequence[PairInstance],
                           train_mode: bool):
    model: ArticleAwareModel = state.model
    rng = state.dropout_rng if train_mode else None
    src_probs, src_feats = model.forward_pairs(
        cache.pair_inputs(source), train_mode=train_mode, rng=rng)
    tgt_feats = None
    if target:
        _, tgt_feats = model.forward_pairs(
            cache.pair_inputs(target), train_mode=train_mode, rng=rng)
    return src_probs, src_feats, tgt_feats


def train_step(state: TrainState, cache: EncCache,
               source: Sequence[PairInstance],
               target: Sequence[PairInstance] = ()) -> LossBreakdown:
    """One optimizer update on one batch.

    The combined objective is the outcome loss plus the scheduled reversal
    strength times the adversary loss. The adversary term is wired through
    the gradient reversal layer, so the single backward pass updates the
    adversary toward its own objective (better discrimination, larger
    critic gap) while the feature extractor receives the opposing gradient
    scaled by lambda(t). Critic weights are clipped after the update.
    """
    config = state.config
    if config.variant == "fact_only":
        return _train_step_fact(state, cache, source)
    lam = (lambda_schedule(state.step, state.total_steps, config.gamma)
           if config.adaptation != "none" else 0.0)

    labels = torch.tensor([p.label for p in source], dtype=torch.float32)
    src_probs, src_feats, tgt_feats = _forward_article_batch(
        state, cache, source, target, train_mode=True)
    loss_c = classifier_loss(src_probs, labels)

    adv_value = 0.0
    backward_total = loss_c
    if config.adaptation == "discriminator":
        feats, ids = _adversary_inputs(config, source, target, src_feats, tgt_feats)
        adv = discriminator_loss(feats, ids, state.adversary, config.regime, lam=lam)
        backward_total = loss_c + adv
        adv_value = float(adv.detach())
    elif config.adaptation == "wasserstein":
        adv = _wasserstein_term(state, config, source, target, src_feats,
                                tgt_feats, lam)
        backward_total = loss_c - adv
        adv_value = float(adv.detach())

    breakdown = LossBreakdown(
        loss_c=float(loss_c.detach()), loss_adv=adv_value, lam=lam,
        total=float(loss_c.detach()) + lam * adv_value)
    if not torch.isfinite(backward_total):
        raise TrainError(f"non-finite loss at step {state.step}: {breakdown}")

    state.optimizer.zero_grad()
    backward_total.backward()
    state.optimizer.lr = state.lr
    state.optimizer.step()
    if config.adaptation == "wasserstein":
        clip_critic(state.adversary, config.clip_c)
    state.step += 1
    return breakdown


def _adversary_inputs(config: TrainConfig, source, target, src_feats, tgt_feats):
    if config.regime == "UDA":
        if not target:
            raise TrainError("UDA step requires target instances")
        feats = torch.cat([src_feats, tgt_feats], dim=0)
        ids = torch.tensor([p.domain_id for p in source] +
                           [p.domain_id for p in target], dtype=torch.long)
    else:
        feats = src_feats
        ids = torch.tensor([p.domain_id for p in source], dtype=torch.long)
    return feats, ids


def _wasserstein_term(state, config, source, target, src_feats, tgt_feats, lam):
    if config.regime == "UDA":
        if not target:
            raise TrainError("UDA step requires target instances")
        feats = torch.cat([src_feats, tgt_feats], dim=0)
        if config.uda_macro_pairing:
            ids = torch.tensor([p.domain_id for p in source] +
                               [p.domain_id for p in target], dtype=torch.long)
            is_src = torch.tensor([True] * len(source) + [False] * len(target))
            return wasserstein_loss_macro(feats, ids, is_src, state.adversary, lam=lam)
        groups = torch.tensor([0] * len(source) + [1] * len(target), dtype=torch.long)
        return wasserstein_loss(feats, groups, state.adversary, "UDA", lam=lam)
    groups = torch.tensor([p.domain_id for p in source], dtype=torch.long)
    return wasserstein_loss(src_feats, groups, state.adversary, "ADA", lam=lam)


def _train_step_fact(state: TrainState, cache: EncCache,
                     batch: Sequence[FactInstance]) -> LossBreakdown:
    model: FactOnlyModel = state.model
    probs = model.forward_docs([cache.doc(b.doc_ref) for b in batch],
                               train_mode=True, rng=state.dropout_rng)
    targets = torch.tensor([b.labels for b in batch], dtype=torch.float32)
    loss = classifier_loss(probs, targets)
    if not torch.isfinite(loss):
        raise TrainError(f"non-finite loss at step {state.step}")
    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.lr = state.lr
    state.optimizer.step()
    state.step += 1
    return LossBreakdown(loss_c=float(loss.detach()), loss_adv=0.0,
                         lam=0.0, total=float(loss.detach()))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def score_pairs(model: ArticleAwareModel, pairs: Sequence[PairInstance],
                cache: EncCache, chunk: int = 256) -> np.ndarray:
    """Inference probabilities for a pair list (no dropout)."""
    out = []
    with torch.no_grad():
        for i in range(0, len(pairs), chunk):
            probs, _ = model.forward_pairs(
                cache.pair_inputs(pairs[i:i + chunk]), train_mode=False)
            out.append(probs.numpy())
    return np.concatenate(out) if out else np.zeros(0)


def _validate(state: TrainState, cache: EncCache, val_pool) -> tuple[float, float, float]:
    from .evaluation import f1_scores

    config = state.config
    if config.variant == "fact_only":
        with torch.no_grad():
            probs = state.model.forward_docs(
                [cache.doc(b.doc_ref) for b in val_pool], train_mode=False)
        targets = torch.tensor([b.labels for b in val_pool], dtype=torch.float32)
        loss = float(classifier_loss(probs, targets))
        arts = config.candidate_articles
        preds = {b.doc_ref: {arts[j] for j in range(len(arts))
                             if float(probs[i, j]) > config.threshold}
                 for i, b in enumerate(val_pool)}
        gold = {b.doc_ref: {arts[j] for j in range(len(arts)) if b.labels[j]}
                for b in val_pool}
        report = f1_scores(preds, gold, arts)
        return loss, report.macro_f1, report.micro_f1

    if any(p.label is None for p in val_pool):
        raise TrainError("validation pool contains unlabeled pairs")
    probs = score_pairs(state.model, val_pool, cache)
    labels = torch.tensor([p.label for p in val_pool], dtype=torch.float32)
    loss = float(classifier_loss(torch.from_numpy(probs), labels))
    articles = tuple(dict.fromkeys(p.article for p in val_pool))
    preds: dict[str, set] = {}
    gold: dict[str, set] = {}
    for p, prob in zip(val_pool, probs):
        preds.setdefault(p.doc_ref, set())
        gold.setdefault(p.doc_ref, set())
        if prob > config.threshold:
            preds[p.doc_ref].add(p.article)
        if p.label == 1:
            gold[p.doc_ref].add(p.article)
    report = f1_scores(preds, gold, articles)
    return loss, report.macro_f1, report.micro_f1


# ---------------------------------------------------------------------------
# Fit
# ---------------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    loss_c: float
    loss_adv: float
    lam: float
    lr: float
    val_macro_f1: float
    val_micro_f1: float

    def to_json(self) -> str:
        return json.dumps({
            "epoch": self.epoch, "loss_c": self.loss_c,
            "loss_adv": self.loss_adv, "lambda": self.lam, "lr": self.lr,
            "val_macro_f1": self.val_macro_f1,
            "val_micro_f1": self.val_micro_f1,
        })


def fit(train_pool, val_pool, config: TrainConfig, store: EmbeddingStore,
        target_pool=(), log_path: Optional[str] = None,
        checkpoint_path: Optional[str] = None,
        last_checkpoint_path: Optional[str] = None,
        resume_state: Optional[TrainState] = None,
        stop_after_epoch: Optional[int] = None,
        ) -> tuple[TrainState, list[EpochLog]]:
    """Train until max_epochs or early stop; keep the best-validation
    checkpoint; decay the learning rate on validation-loss plateaus.

    `stop_after_epoch` suspends the run early without changing the schedule
    horizon; together with `last_checkpoint_path` (the state at suspension,
    as opposed to the best-validation state) it supports exact resume.
    """
    torch.set_num_threads(1)
    if not train_pool or not val_pool:
        raise TrainError("train and validation pools must be non-empty")
    if config.regime == "UDA" and config.variant == "article_aware" and not target_pool:
        raise TrainError("UDA requires a target pool")

    cache = EncCache(store)
    batches_per_epoch = max(1, len(train_pool) // config.batch_size)
    total_steps = config.max_epochs * batches_per_epoch
    fingerprint = pool_fingerprint(train_pool, target_pool)

    if resume_state is not None:
        state = resume_state
        if state.total_steps != total_steps:
            raise TrainError("resume with a different schedule horizon")
        if state.pool_fp is not None and state.pool_fp != fingerprint:
            raise TrainError("resume with different training pools")
    else:
        state = init_state(config, total_steps)
    state.pool_fp = fingerprint

    sampler, target_sampler = _build_samplers(state, config, train_pool, target_pool)
    if resume_state is not None and state.sampler_state:
        sampler.load_state(state.sampler_state)
        if target_sampler is not None and state.target_sampler_state:
            target_sampler.load_state(state.target_sampler_state)

    def snapshot(path):
        state.sampler_state = sampler.state_dict()
        state.target_sampler_state = (
            target_sampler.state_dict() if target_sampler else None)
        save_checkpoint(state, path)

    logs: list[EpochLog] = []
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        stop_at = config.max_epochs if stop_after_epoch is None else min(
            config.max_epochs, stop_after_epoch)
        while state.epoch < stop_at:
            sum_c = sum_adv = 0.0
            lam = 0.0
            for _ in range(batches_per_epoch):
                source = sampler.sample()
                target = target_sampler.sample() if target_sampler else ()
                bd = train_step(state, cache, source, target)
                sum_c += bd.loss_c
                sum_adv += bd.loss_adv
                lam = bd.lam
            val_loss, val_macro, val_micro = _validate(state, cache, val_pool)
            entry = EpochLog(
                epoch=state.epoch, loss_c=sum_c / batches_per_epoch,
                loss_adv=sum_adv / batches_per_epoch, lam=lam, lr=state.lr,
                val_macro_f1=val_macro, val_micro_f1=val_micro)
            logs.append(entry)
            if log_fh:
                log_fh.write(entry.to_json() + "\n")
                log_fh.flush()
            state.epoch += 1

            improved = state.best_val_loss is None or val_loss < state.best_val_loss
            if improved:
                state.best_val_loss = val_loss
                state.epochs_since_best = 0
                if checkpoint_path:
                    snapshot(checkpoint_path)
            else:
                state.epochs_since_best += 1
                if state.epochs_since_best >= 2 * config.plateau_patience:
                    break
                if state.epochs_since_best % config.plateau_patience == 0:
                    state.lr *= config.plateau_factor
                    state.decays += 1
        if checkpoint_path and state.best_val_loss is None:
            snapshot(checkpoint_path)
    finally:
        if log_fh:
            log_fh.close()
    state.sampler_state = sampler.state_dict()
    state.target_sampler_state = (
        target_sampler.state_dict() if target_sampler else None)
    if last_checkpoint_path:
        save_checkpoint(state, last_checkpoint_path)
    return state, logs


def _build_samplers(state: TrainState, config: TrainConfig, train_pool, target_pool):
    if config.variant == "fact_only":
        return FactDocSampler(train_pool, config.batch_size, state.sampler_rng), None
    sampler = BalancedPairSampler(
        train_pool, config.articles_per_batch, config.pos_per_article,
        config.neg_per_article, state.sampler_rng)
    target_sampler = None
    if config.regime == "UDA" and target_pool:
        target_sampler = UnlabeledPairSampler(
            target_pool, config.articles_per_batch, config.batch_size,
            state.target_rng)
    return sampler, target_sampler


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"LACK"
CKPT_VERSION = 1


def pool_fingerprint(source_pool, target_pool=()) -> str:
    h = hashlib.blake2b(digest_size=16)
    for p in list(source_pool) + list(target_pool):
        if isinstance(p, FactInstance):
            h.update(f"{p.doc_ref}|{p.labels}".encode())
        else:
            h.update(f"{p.doc_ref}|{p.article}|{p.label}|{p.domain_id}".encode())
    return h.hexdigest()


def _config_to_json(config: TrainConfig) -> dict:
    d = asdict(config)
    d["model"] = asdict(config.model)
    return d


def _config_from_json(d: dict) -> TrainConfig:
    d = copy.deepcopy(d)
    model = ModelConfig(**d.pop("model"))
    d["candidate_articles"] = tuple(d["candidate_articles"])
    d["adversary_hidden"] = tuple(d["adversary_hidden"])
    return TrainConfig(model=model, **d)


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    """Write the versioned checkpoint container.

    Layout: magic "LACK", version u16, header-length u32, JSON header,
    then the tensor payload as raw little-endian float32 in header order.
    The header carries config, counters, rng states and sampler positions;
    round-trips are bit-exact.
    """
    named = _named_training_params(state.model, state.adversary)
    tensors: list[tuple[str, Tensor]] = []
    for name, p in named:
        tensors.append((f"param/{name}", p.detach()))
    for name, _ in named:
        tensors.append((f"adam_m/{name}", state.optimizer.m[name]))
        tensors.append((f"adam_v/{name}", state.optimizer.v[name]))
    header = {
        "config": _config_to_json(state.config),
        "step": state.step,
        "total_steps": state.total_steps,
        "epoch": state.epoch,
        "lr": state.lr,
        "best_val_loss": state.best_val_loss,
        "epochs_since_best": state.epochs_since_best,
        "decays": state.decays,
        "adam_t": state.optimizer.t,
        "dropout_rng": base64.b64encode(
            state.dropout_rng.get_state().numpy().tobytes()).decode(),
        "sampler_rng": _np_rng_state(state.sampler_rng),
        "target_rng": _np_rng_state(state.target_rng),
        "sampler_state": state.sampler_state,
        "target_sampler_state": state.target_sampler_state,
        "pool_fp": state.pool_fp,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(CKPT_MAGIC)
            fh.write(struct.pack("<HI", CKPT_VERSION, len(blob)))
            fh.write(blob)
            for _, t in tensors:
                fh.write(np.ascontiguousarray(
                    t.numpy(), dtype="<f4").tobytes())
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint to {path}: {exc}") from exc


def _np_rng_state(rng: Optional[np.random.Generator]):
    if rng is None:
        return None
    return json.loads(json.dumps(rng.bit_generator.state))


def load_checkpoint(path: str | Path) -> TrainState:
    """Rebuild a TrainState from a checkpoint; bit-exact inverse of save."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint from {path}: {exc}") from exc
    if len(data) < 10 or data[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack("<HI", data[4:10])
    if version != CKPT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version}")
    if 10 + header_len > len(data):
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(data[10:10 + header_len].decode("utf-8"))
    config = _config_from_json(header["config"])
    state = init_state(config, header["total_steps"])
    state.step = header["step"]
    state.epoch = header["epoch"]
    state.lr = header["lr"]
    state.best_val_loss = header["best_val_loss"]
    state.epochs_since_best = header["epochs_since_best"]
    state.decays = header["decays"]
    state.optimizer.t = header["adam_t"]
    state.optimizer.lr = header["lr"]

    rng_bytes = base64.b64decode(header["dropout_rng"])
    state.dropout_rng.set_state(
        torch.from_numpy(np.frombuffer(rng_bytes, dtype=np.uint8).copy()))
    if header["sampler_rng"]:
        state.sampler_rng.bit_generator.state = header["sampler_rng"]
    if header["target_rng"]:
        state.target_rng.bit_generator.state = header["target_rng"]
    state.sampler_state = header.get("sampler_state")
    state.target_sampler_state = header.get("target_sampler_state")
    state.pool_fp = header.get("pool_fp")

    named = dict(_named_training_params(state.model, state.adversary))
    pos = 10 + header_len
    with torch.no_grad():
        for spec in header["tensors"]:
            group, name = spec["name"].split("/", 1)
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            end = pos + 4 * count
            if end > len(data):
                raise CheckpointError(f"{path}: truncated tensor payload")
            arr = np.frombuffer(data[pos:end], dtype="<f4").reshape(shape)
            pos = end
            if name not in named:
                raise CheckpointError(f"{path}: unknown tensor {spec['name']!r}")
            dest = {"param": named[name],
                    "adam_m": state.optimizer.m.get(name),
                    "adam_v": state.optimizer.v.get(name)}.get(group)
            if dest is None:
                raise CheckpointError(f"{path}: unknown tensor group {group!r}")
            if tuple(dest.shape) != shape:
                raise CheckpointError(
                    f"{path}: shape mismatch for {spec['name']!r}")
            dest.copy_(torch.from_numpy(arr.copy()))
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return state

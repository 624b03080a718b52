"""Domain adaptation components: gradient reversal, domain discriminator,
Wasserstein domain critic with Lipschitz weight clipping, and the reversal
strength schedule.

Articles act as domains. The adversary reads the pair feature vector
through a gradient reversal layer, so a single optimizer pass trains the
adversary to tell domains apart (or to widen the critic's group-mean gap)
while pushing the feature extractor toward domain-invariant features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import Tensor, nn

from .model import init_parameters


class AdaptationError(ValueError):
    pass


GAMMA_GRID = (0.05, 0.1, 0.15, 0.2)


@dataclass(frozen=True)
class GrlSetting:
    """Current reversal strength and its schedule constant."""

    lam: float
    gamma: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam < 1.0:
            raise AdaptationError("lambda must be in [0, 1)")
        if self.gamma not in GAMMA_GRID:
            raise AdaptationError(f"gamma must be one of {GAMMA_GRID}")


@dataclass(frozen=True)
class ClipSetting:
    """Half-width of the compact box the critic's weights are clipped to."""

    c: float = 0.01

    def __post_init__(self) -> None:
        if self.c <= 0:
            raise AdaptationError("clip bound c must be positive")


class _GradientReversal(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x: Tensor, lam: float) -> Tensor:
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output: Tensor):
        return -ctx.lam * grad_output, None


def grl(x: Tensor, lam: float) -> Tensor:
    """Identity in the forward pass; scales backward gradients by -lam."""
    if lam < 0:
        raise AdaptationError("lambda must be nonnegative")
    return _GradientReversal.apply(x, lam)


def _mlp(d_in: int, hidden: Sequence[int], d_out: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    prev = d_in
    for h in hidden:
        layers += [nn.Linear(prev, h), nn.ReLU()]
        prev = h
    layers.append(nn.Linear(prev, d_out))
    return nn.Sequential(*layers)


class Adversary(nn.Module):
    """Domain discriminator (num_domains logits) and Wasserstein critic
    (single scalar), both two-hidden-layer feedforward networks over the
    pair features."""

    def __init__(self, d_in: int, num_domains: int,
                 hidden: tuple[int, int] = (200, 100), seed: int = 0):
        super().__init__()
        if num_domains < 2:
            raise AdaptationError("need at least two domains")
        self.num_domains = num_domains
        self.discriminator = _mlp(d_in, hidden, num_domains)
        self.critic = _mlp(d_in, hidden, 1)
        init_parameters(self, torch.Generator().manual_seed(seed))

    def discriminate(self, features: Tensor) -> Tensor:
        return self.discriminator(features)

    def criticize(self, features: Tensor) -> Tensor:
        return self.critic(features).squeeze(-1)

    def critic_parameters(self):
        return list(self.critic.parameters())


def discriminator_loss(features: Tensor, domain_ids: Tensor,
                       adversary: Adversary, mode: str,
                       lam: float = 0.0, reverse: bool = True) -> Tensor:
    """Mean domain-classification cross entropy over the batch.

    Features pass through the reversal layer first, so minimizing this loss
    trains the discriminator while the feature extractor receives gradients
    scaled by -lam. Under UDA both source and target instances contribute
    (domains enumerate all articles); under ADA only source instances exist
    (domains enumerate source articles). `reverse=False` bypasses the
    reversal layer for gradient verification and diagnostics.
    """
    if mode not in ("UDA", "ADA"):
        raise AdaptationError(f"unknown adaptation mode {mode!r}")
    if features.shape[0] != domain_ids.shape[0]:
        raise AdaptationError("features and domain_ids disagree on batch size")
    if domain_ids.numel() == 0:
        raise AdaptationError("empty batch")
    if int(domain_ids.min()) < 0 or int(domain_ids.max()) >= adversary.num_domains:
        raise AdaptationError(
            f"domain_id out of range [0, {adversary.num_domains})")
    logits = adversary.discriminate(grl(features, lam) if reverse else features)
    return nn.functional.cross_entropy(logits, domain_ids)


def wasserstein_loss(features: Tensor, group_labels: Tensor,
                     adversary: Adversary, mode: str,
                     lam: float = 0.0, reverse: bool = True) -> Tensor:
    """Group-mean critic score differences.

    UDA (`group_labels`: 0 = source, 1 = target): mean source score minus
    mean target score, the empirical Wasserstein estimate between the two
    feature distributions. For per-article-matched means under UDA see
    `wasserstein_loss_macro`.

    ADA (`group_labels`: source domain ids): average absolute difference of
    per-article mean scores over all unordered pairs of articles present.
    """
    if mode not in ("UDA", "ADA"):
        raise AdaptationError(f"unknown adaptation mode {mode!r}")
    if features.shape[0] != group_labels.shape[0]:
        raise AdaptationError("features and group_labels disagree on batch size")
    scores = adversary.criticize(grl(features, lam) if reverse else features)
    if mode == "UDA":
        src = scores[group_labels == 0]
        tgt = scores[group_labels == 1]
        if src.numel() == 0:
            raise AdaptationError("group 'source' has zero instances")
        if tgt.numel() == 0:
            raise AdaptationError("group 'target' has zero instances")
        return src.mean() - tgt.mean()
    groups = sorted(set(group_labels.tolist()))
    if len(groups) < 2:
        raise AdaptationError("ADA batch covers fewer than two articles")
    means = []
    for g in groups:
        sel = scores[group_labels == g]
        if sel.numel() == 0:
            raise AdaptationError(f"group {g!r} has zero instances")
        means.append(sel.mean())
    diffs = [
        (means[i] - means[j]).abs()
        for i in range(len(means)) for j in range(i + 1, len(means))
    ]
    return torch.stack(diffs).mean()


def wasserstein_loss_macro(features: Tensor, domain_ids: Tensor,
                           is_source: Tensor, adversary: Adversary,
                           lam: float = 0.0, reverse: bool = True) -> Tensor:
    """UDA variant with per-article pairing: the difference of the
    unweighted means of per-article group means, source minus target."""
    scores = adversary.criticize(grl(features, lam) if reverse else features)
    side_means = {True: [], False: []}
    for d in sorted(set(domain_ids.tolist())):
        sel = domain_ids == d
        side = bool(is_source[sel][0])
        side_means[side].append(scores[sel].mean())
    if not side_means[True]:
        raise AdaptationError("group 'source' has zero instances")
    if not side_means[False]:
        raise AdaptationError("group 'target' has zero instances")
    return torch.stack(side_means[True]).mean() - torch.stack(side_means[False]).mean()


def clip_critic(adversary: Adversary, c: float | ClipSetting) -> Adversary:
    """Clamp every critic weight into [-c, c]; the discriminator is untouched."""
    bound = c.c if isinstance(c, ClipSetting) else float(c)
    if bound <= 0:
        raise AdaptationError("clip bound must be positive")
    with torch.no_grad():
        for p in adversary.critic_parameters():
            p.clamp_(-bound, bound)
    return adversary


def lambda_schedule(t: int, total_steps: int, gamma: float) -> float:
    """Reversal strength ramp: 2 / (1 + exp(-gamma * t / T)) - 1.

    Monotone from 0 at t=0 to tanh(gamma / 2) at t=T.
    """
    if total_steps <= 0:
        raise AdaptationError("total_steps must be positive")
    if not 0 <= t <= total_steps:
        raise AdaptationError(f"step {t} outside [0, {total_steps}]")
    p = t / total_steps
    return 2.0 / (1.0 + math.exp(-gamma * p)) - 1.0

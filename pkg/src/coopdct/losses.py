"""Training objectives.

Sign conventions: the critic *minimizes* ``loss_critic`` (pushing source
scores up and target scores down) and the encoder *minimizes*
``loss_adversarial``, its exact negation. Source-encoded codes play the
"real" role, target-encoded codes the "fake" one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .corpus import PAD, PaddedBatch
from .netcore import decoder_targets


@dataclass(frozen=True)
class LossWeights:
    lambda_con: float = 0.0
    lambda_clf: float = 0.0
    gp_weight: float = 10.0

    def __post_init__(self):
        if self.lambda_con not in (0, 1) or self.lambda_clf not in (0, 1):
            raise ValueError("cooperative loss weights must be 0 or 1")
        if self.gp_weight < 0:
            raise ValueError("gp_weight must be nonnegative")

    @property
    def cooperative(self) -> bool:
        return bool(self.lambda_con or self.lambda_clf)


def loss_autoencoder(logits: torch.Tensor, gold: PaddedBatch | np.ndarray | torch.Tensor) -> torch.Tensor:
    """Token-level negative log-likelihood averaged over non-PAD targets.

    ``gold`` is either the input batch (EOS is appended to form the targets)
    or an explicit ``[B, T]`` target id matrix.
    """
    if isinstance(gold, PaddedBatch):
        gold = decoder_targets(gold)
    targets = torch.as_tensor(gold, dtype=torch.long, device=logits.device)
    if targets.shape != logits.shape[:2]:
        raise ValueError(f"targets {tuple(targets.shape)} do not match logits {tuple(logits.shape)}")
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=PAD)


def loss_critic(scores_real: torch.Tensor, scores_fake: torch.Tensor) -> torch.Tensor:
    return -scores_real.mean() + scores_fake.mean()


def loss_adversarial(scores_real: torch.Tensor, scores_fake: torch.Tensor) -> torch.Tensor:
    return -loss_critic(scores_real, scores_fake)


def _positive_counts(positives: Sequence[Sequence[int]], anchors: Sequence[int], n_rows: int) -> torch.Tensor:
    counts = np.zeros((len(anchors), n_rows))
    for a, (i, pos) in enumerate(zip(anchors, positives)):
        if len(pos) == 0:
            raise ValueError(f"anchor {i} has no positives")
        for j in pos:
            if j == i or not 0 <= j < n_rows:
                raise ValueError(f"invalid positive {j} for anchor {i}")
            counts[a, j] += 1  # duplicates arise from with-replacement fallback
    return torch.as_tensor(counts)


def loss_contrastive(reps: torch.Tensor, positives: Sequence[Sequence[int]], anchors: Sequence[int] | None = None,
                     normalize: bool = False, temperature: float = 1.0, variant: str = "literal") -> torch.Tensor:
    """Multi-positive contrastive loss averaged over anchors.

    ``positives[a]`` lists the in-batch rows sharing the profile of anchor
    row ``anchors[a]`` (default: anchor ``a`` is row ``a``). The denominator
    runs over every row except the anchor itself.

    ``variant="literal"`` takes the log of the summed positive terms scaled by
    ``1/|P|``; ``variant="supcon"`` averages the per-positive log terms.
    """
    if anchors is None:
        anchors = list(range(len(positives)))
    if len(anchors) != len(positives):
        raise ValueError("one positive set per anchor required")
    if variant not in ("literal", "supcon"):
        raise ValueError(f"unknown contrastive variant {variant!r}")
    if normalize:
        reps = F.normalize(reps, dim=1)
    n = reps.shape[0]
    counts = _positive_counts(positives, anchors, n).to(reps)
    idx = torch.as_tensor(list(anchors), dtype=torch.long, device=reps.device)
    sims = reps[idx] @ reps.T / temperature
    self_mask = torch.zeros_like(sims, dtype=torch.bool)
    self_mask[torch.arange(len(idx)), idx] = True
    log_denom = torch.logsumexp(sims.masked_fill(self_mask, float("-inf")), dim=1)
    n_pos = counts.sum(dim=1)
    if variant == "literal":
        log_num = torch.logsumexp(sims + torch.log(counts), dim=1)
        per_anchor = -(log_num - log_denom) / n_pos
    else:
        log_prob = sims - log_denom[:, None]
        per_anchor = -(counts * log_prob.masked_fill(counts == 0, 0.0)).sum(dim=1) / n_pos
    return per_anchor.mean()


def loss_classification(logits: torch.Tensor, targets: torch.Tensor | np.ndarray) -> torch.Tensor:
    targets = torch.as_tensor(targets).to(logits)
    if targets.shape != logits.shape:
        raise ValueError(f"targets {tuple(targets.shape)} do not match logits {tuple(logits.shape)}")
    if not torch.all((targets == 0) | (targets == 1)):
        raise ValueError("classification targets must be 0/1")
    return F.binary_cross_entropy_with_logits(logits, targets)


def gradient_penalty(z_real: torch.Tensor, z_fake: torch.Tensor, critic: Callable,
                     rng: torch.Generator | None = None, eps: torch.Tensor | None = None) -> torch.Tensor:
    """Mean of ``(||grad critic(z_hat)|| - 1)^2`` on random interpolates.

    ``critic`` may return either scores or a ``(scores, hidden)`` pair.
    """
    if z_real.shape != z_fake.shape:
        raise ValueError("real and fake codes must have the same shape")
    if eps is None:
        eps = torch.rand(z_real.shape[0], 1, generator=rng, dtype=z_real.dtype)
    eps = eps.reshape(-1, 1).to(z_real)
    z_hat = (eps * z_real.detach() + (1 - eps) * z_fake.detach()).requires_grad_(True)
    out = critic(z_hat)
    scores = out[0] if isinstance(out, tuple) else out
    grad = None
    if scores.requires_grad:
        grad, = torch.autograd.grad(scores.sum(), z_hat, create_graph=True, allow_unused=True)
    if grad is None:  # critic independent of its input
        grad = torch.zeros_like(z_hat)
    return ((grad.norm(2, dim=1) - 1) ** 2).mean()

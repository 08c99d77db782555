"""Masked-location prediction head and the masked cross-entropy loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
from torch import nn

from .embeddings import N_CONTEXT

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class PredictionHead(nn.Module):
    """Affine map from a hidden state to logits over the |P| place tokens."""

    def __init__(self, d: int, n_places: int):
        super().__init__()
        self.proj = nn.Linear(d, n_places)

    @property
    def W(self) -> torch.Tensor:
        return self.proj.weight

    @property
    def bias(self) -> torch.Tensor:
        return self.proj.bias

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.proj(h)


@dataclass
class Targets:
    """Flattened masked targets of a batch: row, visit index, true token."""

    rows: torch.Tensor
    positions: torch.Tensor
    tokens: torch.Tensor

    def __len__(self) -> int:
        return self.rows.numel()

    @classmethod
    def from_plans(cls, plans) -> "Targets":
        rows, pos, tok = [], [], []
        for b, plan in enumerate(plans):
            for p, t in plan.targets:
                rows.append(b)
                pos.append(p)
                tok.append(t)
        as_long = lambda xs: torch.tensor(xs, dtype=torch.long)  # noqa: E731
        return cls(as_long(rows), as_long(pos), as_long(tok))


def gather_masked(H: torch.Tensor, targets: Targets) -> torch.Tensor:
    """Hidden states at the masked visit positions, (T, d)."""
    return H[targets.rows, targets.positions + N_CONTEXT]


def masked_logits(H: torch.Tensor, head: PredictionHead, targets: Targets) -> torch.Tensor:
    return head(gather_masked(H, targets))


def predict_masked(H: torch.Tensor, head: PredictionHead, targets: Targets) -> torch.Tensor:
    """softmax(W h_i + b) for every masked position, (T, |P|)."""
    logits = masked_logits(H, head, targets)
    shifted = logits - logits.amax(dim=-1, keepdim=True)
    e = torch.exp(shifted)
    return e / e.sum(dim=-1, keepdim=True)


@dataclass
class LossValue:
    total: torch.Tensor  # sum over masked targets
    n_targets: int

    @property
    def mean(self) -> torch.Tensor:
        return self.total / max(self.n_targets, 1)


def masked_ce_loss(probs: torch.Tensor, targets: Targets) -> LossValue:
    """-sum log p[true token] over masked targets; probabilities floored at 1e-12."""
    if len(targets) == 0:
        return LossValue(probs.sum() * 0.0, 0)
    p_true = probs.gather(1, targets.tokens.unsqueeze(1)).squeeze(1)
    if (p_true < PROB_FLOOR).any():
        log.warning("clamped %d target probabilities below %g", int((p_true < PROB_FLOOR).sum()), PROB_FLOOR)
    return LossValue(-torch.log(p_true.clamp_min(PROB_FLOOR)).sum(), len(targets))


def masked_ce_from_logits(logits: torch.Tensor, targets: Targets) -> LossValue:
    """Same quantity as masked_ce_loss, computed through log-softmax for training."""
    if len(targets) == 0:
        return LossValue(logits.sum() * 0.0, 0)
    logp = torch.log_softmax(logits, dim=-1)
    return LossValue(-logp.gather(1, targets.tokens.unsqueeze(1)).sum(), len(targets))

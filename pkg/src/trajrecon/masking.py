"""Choose visit positions to hide and build the masked input sequence."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
import torch

from .embeddings import N_CONTEXT, InputSequence


class MaskMode(str, Enum):
    ZERO = "zero"              # location component suppressed, time kept
    MASK_TOKEN = "mask_token"  # location component replaced by a learned vector


@dataclass(frozen=True)
class MaskPlan:
    """Which visits of one sequence are hidden.

    ``mask_vector[i]`` is True when visit i is masked; ``targets`` pairs each
    masked visit index with its true token.
    """

    mask_vector: tuple[bool, ...]
    targets: tuple[tuple[int, int], ...]
    seed: int | None = None

    @property
    def positions(self) -> list[int]:
        return [p for p, _ in self.targets]

    def __len__(self) -> int:
        return len(self.targets)


def n_masked(n: int, mask_ratio: float) -> int:
    """round(ratio * n) with halves rounded up, clamped to [1, n - 1]."""
    return min(max(math.floor(mask_ratio * n + 0.5), 1), n - 1)


def plan_masks_for(tokens: Sequence[int], mask_ratio: float, rng_seed) -> MaskPlan:
    n = len(tokens)
    if n < 2:
        raise ValueError(f"masking needs at least 2 visits, got {n}")
    if not 0 < mask_ratio < 1:
        raise ValueError(f"mask_ratio must lie in (0, 1), got {mask_ratio}")
    rng = np.random.default_rng(rng_seed)
    chosen = np.sort(rng.choice(n, size=n_masked(n, mask_ratio), replace=False))
    marks = [False] * n
    for p in chosen:
        marks[p] = True
    seed = rng_seed if isinstance(rng_seed, int) else None
    return MaskPlan(tuple(marks), tuple((int(p), int(tokens[p])) for p in chosen), seed)


def plan_masks(seq: InputSequence, mask_ratio: float, rng_seed) -> MaskPlan:
    """Uniformly pick visits to mask, without replacement, from a single-row sequence."""
    if seq.tokens.shape[0] != 1:
        raise ValueError("plan_masks takes a single sequence; plan batch rows individually")
    n = int(seq.maskable[0].sum())
    return plan_masks_for(seq.visit_tokens[0, :n].tolist(), mask_ratio, rng_seed)


def empty_plan(n: int) -> MaskPlan:
    return MaskPlan((False,) * n, ())


def plan_from_positions(tokens: Sequence[int], positions: Sequence[int]) -> MaskPlan:
    marks = [False] * len(tokens)
    for p in positions:
        if not 0 <= p < len(tokens):
            raise ValueError(f"mask position {p} outside 0..{len(tokens) - 1}")
        marks[p] = True
    pos = sorted(set(positions))
    return MaskPlan(tuple(marks), tuple((p, int(tokens[p])) for p in pos))


def mask_matrix(plans: Sequence[MaskPlan], n: int) -> torch.Tensor:
    """Stack per-row plans into a (B, n) boolean tensor."""
    out = torch.zeros((len(plans), n), dtype=torch.bool)
    for b, plan in enumerate(plans):
        if len(plan.mask_vector) > n:
            raise ValueError(f"plan for row {b} covers {len(plan.mask_vector)} visits, sequence has {n}")
        if plan.positions:
            out[b, plan.positions] = True
    return out


def apply_masks(seq: InputSequence, plans: MaskPlan | Sequence[MaskPlan], mode: MaskMode | str = MaskMode.ZERO,
                mask_embedding: torch.Tensor | None = None, mask_id: int | None = None) -> InputSequence:
    """Replace the location part of masked visits, keeping their time part.

    In ``zero`` mode a masked visit token is exactly ``t_i``; in ``mask_token``
    mode it is ``mask_embedding + t_i``. Masked token ids in the returned
    sequence are overwritten by ``mask_id`` (or -1) so the true labels survive
    only in the plan.
    """
    mode = MaskMode(mode)
    if isinstance(plans, MaskPlan):
        plans = [plans]
    B, n = seq.visit_tokens.shape
    if len(plans) != B:
        raise ValueError(f"{len(plans)} plans for a batch of {B}")
    for b, plan in enumerate(plans):
        valid = int(seq.maskable[b].sum())
        for p in plan.positions:
            if not 0 <= p < valid:
                raise ValueError(f"mask position {p} outside the {valid} visits of row {b}")
    M = mask_matrix(plans, n)
    if not M.any():
        return seq
    if mode is MaskMode.ZERO:
        replacement = torch.zeros_like(seq.location)
    else:
        if mask_embedding is None:
            raise ValueError("mask_token mode needs a mask embedding")
        replacement = mask_embedding.expand_as(seq.location)
    location = torch.where(M.unsqueeze(-1), replacement, seq.location)
    visit_vecs = torch.where(M.unsqueeze(-1), location + seq.time, seq.tokens[:, N_CONTEXT:])
    tokens = torch.cat([seq.tokens[:, :N_CONTEXT], visit_vecs], dim=1)
    visit_tokens = seq.visit_tokens.masked_fill(M, -1 if mask_id is None else mask_id)
    return InputSequence(tokens, location, seq.time, visit_tokens, seq.pad_mask, seq.maskable)

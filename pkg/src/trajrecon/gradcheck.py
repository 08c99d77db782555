"""Central finite-difference check of the model's analytic gradients."""

from __future__ import annotations

import copy
import datetime as dt
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .core import ContextProfile, Dataset, GeoPoint, HolidayCalendar, Trajectory, build_tower_vocab, make_visit, slot_start
from .embeddings import EmbeddingConfig, SequenceBatch, collate, sequence_item
from .encoder import EncoderConfig
from .head import masked_ce_from_logits
from .masking import MaskPlan, plan_from_positions
from .model import ModelConfig, TrajectoryModel


@dataclass
class GradcheckReport:
    max_rel_error: float
    tolerance: float
    per_tensor: dict[str, float] = field(default_factory=dict)
    max_abs_grad: float = 0.0
    n_checked: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "tolerance": self.tolerance,
            "max_abs_grad": self.max_abs_grad,
            "n_checked": self.n_checked,
            "per_tensor": self.per_tensor,
        }


def _loss(model: TrajectoryModel, batch: SequenceBatch, plans: Sequence[MaskPlan]) -> torch.Tensor:
    logits, targets = model(batch, plans)
    return masked_ce_from_logits(logits, targets).total


def relative_error(a: torch.Tensor, b: torch.Tensor, floor: float = 1e-10) -> float:
    """||a - b|| / max(||a||, ||b||); zero when both norms are below ``floor``."""
    scale = max(float(a.norm()), float(b.norm()))
    if scale < floor:
        return 0.0
    return float((a - b).norm()) / scale


def gradcheck(model: TrajectoryModel, batch: SequenceBatch, plans: Sequence[MaskPlan],
              eps: float = 1e-4, tol: float = 1e-4) -> GradcheckReport:
    """Compare autograd gradients of the summed masked loss with central differences.

    Works on a float64 copy in eval mode (no dropout); every parameter element
    is perturbed. Meant for tiny models only.
    """
    m = copy.deepcopy(model).double().eval()
    m.zero_grad(set_to_none=True)
    loss = _loss(m, batch, plans)
    loss.backward()
    report = GradcheckReport(0.0, tol)
    named = [(n, p) for n, p in m.named_parameters() if p.requires_grad]
    with torch.no_grad():
        for name, p in named:
            analytic = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
            numeric = torch.zeros_like(p)
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = _loss(m, batch, plans).item()
                flat[i] = orig - eps
                down = _loss(m, batch, plans).item()
                flat[i] = orig
                numeric.view(-1)[i] = (up - down) / (2 * eps)
            err = relative_error(analytic, numeric)
            report.per_tensor[name] = err
            report.max_rel_error = max(report.max_rel_error, err)
            report.max_abs_grad = max(report.max_abs_grad, float(analytic.abs().max()) if analytic.numel() else 0.0)
            report.n_checked += flat.numel()
    return report


def tiny_instance(seed: int = 0, n_visits: int = 6, n_places: int = 10, masked: Sequence[int] = (1, 4),
                  d: int = 8, heads: int = 2, layers: int = 1):
    """A d=8, h=2, L=1 model with one n-visit CDR sequence and its mask plan."""
    rng = np.random.default_rng(seed)
    towers = [(f"T{i}", GeoPoint(0.30 + 0.01 * rng.random(), 32.55 + 0.01 * rng.random())) for i in range(n_places)]
    vocab = build_tower_vocab(towers)
    slots = np.sort(rng.choice(np.arange(1, 35), size=n_visits, replace=False))
    visits = tuple(make_visit(int(rng.integers(n_places)), slot_start(int(s)), vocab.modality) for s in slots)
    traj = Trajectory("u0", dt.date(2024, 1, 3), visits)
    ds = Dataset(vocab, [traj], {"u0": ContextProfile("30-44", "female", 0, 1)}, HolidayCalendar())
    cfg = ModelConfig(
        embedding=EmbeddingConfig(d=d, space2vec_scales=4, lambda_min=100.0, lambda_max=5000.0),
        encoder=EncoderConfig(layers=layers, heads=heads, d_ff=4 * d, dropout=0.0),
        max_len=6 + n_visits,
    )
    torch.manual_seed(seed)
    model = TrajectoryModel.for_dataset(ds, cfg)
    item = sequence_item(traj, ds)
    batch = collate([item], vocab.pad_id)
    plan = plan_from_positions(item.tokens, masked)
    return model, batch, [plan]

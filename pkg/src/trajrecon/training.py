"""Optimizer, training loop, held-out metrics and user splits."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .core import Dataset
from .embeddings import SequenceItem, collate, sequence_item
from .encoder import NumericalError
from .head import masked_ce_from_logits
from .masking import MaskPlan, plan_masks_for
from .model import TrajectoryModel, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

VAL_STREAM = 2**31 - 1  # seed-sequence word reserved for fixed validation masks


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    optimizer: str = "adam_like"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 20
    mask_ratio: float = 0.2
    seed: int = 0
    gradient_clip_norm: float = 1.0
    warmup_steps: int = 100
    # Bound on the global norm of the adam_like step direction: each step moves
    # parameters by at most learning_rate * update_clip_norm. None disables it.
    update_clip_norm: float | None = 100.0
    lr_schedule: str = "constant"  # or "cosine"

    def __post_init__(self):
        if self.optimizer not in ("adam_like", "sgd"):
            raise ValueError(f"optimizer must be 'adam_like' or 'sgd', got {self.optimizer!r}")
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning_rate, batch_size and epochs must be non-negative (batch_size >= 1)")
        if self.gradient_clip_norm <= 0 or self.warmup_steps < 0:
            raise ValueError("gradient_clip_norm must be positive and warmup_steps non-negative")
        if self.update_clip_norm is not None and self.update_clip_norm <= 0:
            raise ValueError("update_clip_norm must be positive or None")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if not 0 < self.mask_ratio < 1:
            raise ValueError("mask_ratio must lie in (0, 1)")


class ClippedAdam(torch.optim.Optimizer):
    """Adam whose post-moment update direction is clipped to a global norm.

    With ``update_clip = c`` every step moves the parameters by at most
    ``lr * c`` in global L2 norm, which plain Adam does not guarantee.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, update_clip: float | None = 1.0):
        super().__init__(params, dict(lr=lr, betas=betas, eps=eps))
        self.update_clip = update_clip

    @torch.no_grad()
    def step(self, closure=None):
        directions = []
        for group in self.param_groups:
            b1, b2 = group["betas"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["m"] = torch.zeros_like(p)
                    state["v"] = torch.zeros_like(p)
                state["step"] += 1
                g = p.grad
                state["m"].mul_(b1).add_(g, alpha=1 - b1)
                state["v"].mul_(b2).addcmul_(g, g, value=1 - b2)
                m_hat = state["m"] / (1 - b1 ** state["step"])
                v_hat = state["v"] / (1 - b2 ** state["step"])
                directions.append((group, p, m_hat / (v_hat.sqrt() + group["eps"])))
        if not directions:
            return None
        scale = 1.0
        if self.update_clip is not None:
            norm = math.sqrt(sum(float(u.pow(2).sum()) for _, _, u in directions))
            if norm > self.update_clip:
                scale = self.update_clip / norm
        for group, p, u in directions:
            p.add_(u, alpha=-group["lr"] * scale)
        return None

    def state_dict(self):
        sd = super().state_dict()
        sd["update_clip"] = self.update_clip
        return sd

    def load_state_dict(self, state_dict):
        state_dict = dict(state_dict)
        self.update_clip = state_dict.pop("update_clip", self.update_clip)
        super().load_state_dict(state_dict)


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(model.parameters(), lr=cfg.learning_rate)
    return ClippedAdam(model.parameters(), cfg.learning_rate, cfg.betas, cfg.eps, cfg.update_clip_norm)


def lr_at(step: int, cfg: TrainConfig, total_steps: int | None = None) -> float:
    """Linear warmup, then constant or cosine-decayed to zero at ``total_steps``."""
    lr = cfg.learning_rate
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return lr * (step + 1) / cfg.warmup_steps
    if cfg.lr_schedule == "cosine" and total_steps:
        span = max(total_steps - cfg.warmup_steps, 1)
        frac = min(1.0, (step - cfg.warmup_steps) / span)
        return lr * 0.5 * (1.0 + math.cos(math.pi * frac))
    return lr


def split_users(users: Iterable[str], seed: int, fractions=(0.8, 0.1, 0.1)) -> tuple[list[str], list[str], list[str]]:
    """Deterministic train/val/test partition of users."""
    users = sorted(users)
    order = np.random.default_rng([seed, 17]).permutation(len(users))
    n = len(users)
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    # A non-zero fraction keeps at least one user once there are enough to go round.
    if n >= 3:
        n_val = max(n_val, 1) if fractions[1] > 0 else 0
        n_test = max(n_test, 1) if fractions[2] > 0 else 0
    shuffled = [users[i] for i in order]
    test = sorted(shuffled[:n_test])
    val = sorted(shuffled[n_test:n_test + n_val])
    train = sorted(shuffled[n_test + n_val:])
    return train, val, test


def training_items(ds: Dataset, max_visits: int) -> list[SequenceItem]:
    """Sequence items with at least two usable visits (one must stay observed)."""
    items = []
    for t in ds.trajectories:
        it = sequence_item(t, ds, max_visits)
        if len(it.tokens) >= 2:
            items.append(it)
    return items


def epoch_plan(item: SequenceItem, index: int, epoch: int, cfg: TrainConfig) -> MaskPlan:
    return plan_masks_for(item.tokens, cfg.mask_ratio, np.random.SeedSequence([cfg.seed, epoch, index]))


def fixed_plans(items: Sequence[SequenceItem], mask_ratio: float, seed: int) -> list[MaskPlan]:
    return [plan_masks_for(it.tokens, mask_ratio, np.random.SeedSequence([seed, VAL_STREAM, i]))
            for i, it in enumerate(items)]


@dataclass
class MaskedMetrics:
    loss: float
    accuracy: float
    top3: float
    top5: float
    n_targets: int


@torch.no_grad()
def masked_metrics(model: TrajectoryModel, items: Sequence[SequenceItem], plans: Sequence[MaskPlan],
                   batch_size: int = 256) -> MaskedMetrics:
    was_training = model.training
    model.eval()
    total, n, hits = 0.0, 0, np.zeros(3)
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        pl = plans[start:start + batch_size]
        logits, targets = model(collate(chunk, model.pad_id), pl)
        if len(targets) == 0:
            continue
        total += float(masked_ce_from_logits(logits, targets).total)
        n += len(targets)
        k = min(5, logits.shape[1])
        top = torch.topk(logits, k, dim=1).indices
        match = top == targets.tokens.unsqueeze(1)
        for j, kk in enumerate((1, 3, 5)):
            hits[j] += float(match[:, :kk].any(dim=1).sum())
    model.train(was_training)
    if n == 0:
        return MaskedMetrics(float("nan"), float("nan"), float("nan"), float("nan"), 0)
    return MaskedMetrics(total / n, float(hits[0] / n), float(hits[1] / n), float(hits[2] / n), n)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    val_top3: float
    val_top5: float


@dataclass
class TrainResult:
    model: TrajectoryModel
    curve: list[EpochStats] = field(default_factory=list)
    best_epoch: int | None = None
    step: int = 0

    def curve_rows(self) -> list[dict]:
        return [asdict(e) for e in self.curve]


CURVE_COLUMNS = ("epoch", "train_loss", "val_loss", "val_acc", "val_top3", "val_top5")


def write_curve_csv(path: str | Path, curve: Sequence[EpochStats]) -> None:
    lines = [",".join(CURVE_COLUMNS)]
    for e in curve:
        lines.append(",".join([str(e.epoch)] + [repr(float(getattr(e, c))) for c in CURVE_COLUMNS[1:]]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def train(train_ds: Dataset, model: TrajectoryModel, cfg: TrainConfig, val_ds: Dataset | None = None,
          out_dir: str | Path | None = None, resume: bool = False,
          on_epoch: Callable[[EpochStats], None] | None = None) -> TrainResult:
    """Fit ``model`` on masked observed visits of ``train_ds``.

    Masks are re-drawn every epoch from (seed, epoch, sequence index); the
    validation masks are fixed. With ``out_dir`` the best-by-validation-loss
    weights go to ``best.pt`` and the resumable state to ``last.pt``. When a
    validation set is given, the returned model carries the best weights.
    """
    items = training_items(train_ds, model.cfg.max_visits)
    if not items:
        raise ValueError("no trainable sequences (need trajectories with >= 2 visits)")
    val_items = training_items(val_ds, model.cfg.max_visits) if val_ds is not None else []
    val_plans = fixed_plans(val_items, cfg.mask_ratio, cfg.seed)

    torch.manual_seed(cfg.seed)
    opt = make_optimizer(model, cfg)
    out = Path(out_dir) if out_dir is not None else None
    result = TrainResult(model)
    start_epoch = 0
    best_loss = math.inf
    best_state = None

    if resume and out is not None and (out / "last.pt").exists():
        loaded, extra = load_checkpoint(out / "last.pt", train_ds.vocab)
        model.load_state_dict(loaded.state_dict())
        opt.load_state_dict(extra["optimizer"])
        torch.set_rng_state(extra["rng_state"])
        result.step = int(extra["step"])
        start_epoch = int(extra["epoch"]) + 1
        result.curve = [EpochStats(**row) for row in extra["curve"]]
        result.best_epoch = extra.get("best_epoch")
        best_loss = float(extra.get("best_loss", math.inf))
        if out is not None and (out / "best.pt").exists():
            best_state = load_checkpoint(out / "best.pt", train_ds.vocab)[0].state_dict()
        log.info("resumed at epoch %d, step %d", start_epoch, result.step)

    clip = cfg.gradient_clip_norm
    total_steps = cfg.epochs * math.ceil(len(items) / cfg.batch_size)
    for epoch in range(start_epoch, cfg.epochs):
        model.train()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(items))
        loss_sum, n_targets = 0.0, 0
        for start in range(0, len(items), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            chunk = [items[i] for i in idx]
            plans = [epoch_plan(items[i], int(i), epoch, cfg) for i in idx]
            logits, targets = model(collate(chunk, model.pad_id), plans)
            loss = masked_ce_from_logits(logits, targets)
            if not torch.isfinite(loss.total):
                if best_state is not None:
                    model.load_state_dict(best_state)
                raise NumericalError(f"loss diverged at epoch {epoch}, step {result.step}")
            opt.zero_grad(set_to_none=True)
            loss.mean.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), clip)
            for group in opt.param_groups:
                group["lr"] = lr_at(result.step, cfg, total_steps)
            opt.step()
            result.step += 1
            loss_sum += float(loss.total.detach())
            n_targets += loss.n_targets

        train_loss = loss_sum / max(n_targets, 1)
        if val_items:
            vm = masked_metrics(model, val_items, val_plans)
            stats = EpochStats(epoch, train_loss, vm.loss, vm.accuracy, vm.top3, vm.top5)
            score = vm.loss
        else:
            stats = EpochStats(epoch, train_loss, float("nan"), float("nan"), float("nan"), float("nan"))
            score = train_loss
        result.curve.append(stats)
        log.info("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f", epoch, train_loss, stats.val_loss,
                 stats.val_acc)
        if on_epoch is not None:
            on_epoch(stats)
        if score < best_loss:
            best_loss = score
            result.best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            if out is not None:
                save_checkpoint(out / "best.pt", model, train_ds.vocab, {"epoch": epoch, "step": result.step})
        if out is not None:
            save_checkpoint(out / "last.pt", model, train_ds.vocab, {
                "optimizer": opt.state_dict(),
                "rng_state": torch.get_rng_state(),
                "step": result.step,
                "epoch": epoch,
                "curve": result.curve_rows(),
                "best_epoch": result.best_epoch,
                "best_loss": best_loss,
            })

    if val_items and best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return result

"""The full masked-visit model: embedder, encoder, prediction head, checkpoints."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch
from torch import nn

from .core import DataError, Dataset, LocationVocab
from .embeddings import N_CONTEXT, EmbeddingConfig, InputEmbedder, InputSequence, SequenceBatch
from .encoder import EncoderConfig, TransformerEncoder
from .head import PredictionHead, Targets, gather_masked
from .masking import MaskMode, MaskPlan, apply_masks

CHECKPOINT_FORMAT = "trajrecon-checkpoint/1"


@dataclass(frozen=True)
class ModelConfig:
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    mask_mode: MaskMode = MaskMode.ZERO
    max_len: int = 64
    tie_embeddings: bool = False
    ablate: tuple[str, ...] = ()

    @property
    def max_visits(self) -> int:
        return self.max_len - N_CONTEXT

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """d=32, two layers of two heads, no dropout: the size used for overfit and smoke runs."""
        base = cls(
            embedding=EmbeddingConfig(d=32, space2vec_scales=8),
            encoder=EncoderConfig(layers=2, heads=2, d_ff=64, dropout=0.0),
        )
        return dataclasses.replace(base, **overrides)

    def to_dict(self) -> dict:
        return {
            "embedding": dataclasses.asdict(self.embedding),
            "encoder": dataclasses.asdict(self.encoder),
            "mask_mode": MaskMode(self.mask_mode).value,
            "max_len": self.max_len,
            "tie_embeddings": self.tie_embeddings,
            "ablate": list(self.ablate),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            EmbeddingConfig(**d["embedding"]),
            EncoderConfig(**d["encoder"]),
            MaskMode(d["mask_mode"]),
            int(d["max_len"]),
            bool(d["tie_embeddings"]),
            tuple(d["ablate"]),
        )


class TrajectoryModel(nn.Module):
    def __init__(self, vocab: LocationVocab, n_age: int, n_gender: int, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        if cfg.max_len <= N_CONTEXT:
            raise ValueError(f"max_len must exceed the {N_CONTEXT} context positions")
        self.cfg = cfg
        self.n_places = vocab.n_places
        self.pad_id, self.mask_id = vocab.pad_id, vocab.mask_id
        self.n_age, self.n_gender = n_age, n_gender
        d = cfg.embedding.d
        self.embedder = InputEmbedder(vocab, cfg.embedding, n_age, n_gender, cfg.ablate)
        self.mask_embedding = nn.Parameter(torch.randn(d) * 0.1)
        self.encoder = TransformerEncoder(d, cfg.encoder)
        self.head = PredictionHead(d, vocab.n_places)

    @classmethod
    def for_dataset(cls, ds: Dataset, cfg: ModelConfig = ModelConfig()) -> "TrajectoryModel":
        return cls(ds.vocab, len(ds.age_buckets), len(ds.genders), cfg)

    def embed(self, batch: SequenceBatch, plans: Sequence[MaskPlan]) -> InputSequence:
        seq = self.embedder(batch)
        return apply_masks(seq, plans, self.cfg.mask_mode, self.mask_embedding, self.mask_id)

    def hidden(self, batch: SequenceBatch, plans: Sequence[MaskPlan]) -> torch.Tensor:
        seq = self.embed(batch, plans)
        return self.encoder(seq.tokens, seq.pad_mask)

    def logits_from_hidden(self, H: torch.Tensor, targets: Targets) -> torch.Tensor:
        h = gather_masked(H, targets)
        if self.cfg.tie_embeddings:
            places = torch.arange(self.n_places)
            W = self.embedder.encode_locations(places)
            return h @ W.T + self.head.bias
        return self.head(h)

    def forward(self, batch: SequenceBatch, plans: Sequence[MaskPlan]) -> tuple[torch.Tensor, Targets]:
        """Logits (T, |P|) at every masked position, with the matching targets."""
        if batch.visit_tokens.shape[1] > self.cfg.max_visits:
            raise DataError(f"batch has {batch.visit_tokens.shape[1]} visit positions; limit {self.cfg.max_visits}")
        targets = Targets.from_plans(plans)
        H = self.hidden(batch, plans)
        return self.logits_from_hidden(H, targets), targets


def save_checkpoint(path: str | Path, model: TrajectoryModel, vocab: LocationVocab, extra: dict | None = None) -> None:
    """Named tensors plus shapes and the model config, in one torch archive."""
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "config": model.cfg.to_dict(),
        "n_age": model.n_age,
        "n_gender": model.n_gender,
        "places": [e.place_id for e in vocab.entries],
        "modality": vocab.modality.value,
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "tensors": state,
        "extra": extra or {},
    }, Path(path))


def load_checkpoint(path: str | Path, vocab: LocationVocab) -> tuple[TrajectoryModel, dict]:
    blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if blob["places"] != [e.place_id for e in vocab.entries] or blob["modality"] != vocab.modality.value:
        raise DataError(f"{path}: checkpoint vocabulary does not match the dataset")
    model = TrajectoryModel(vocab, blob["n_age"], blob["n_gender"], ModelConfig.from_dict(blob["config"]))
    expected = model.state_dict()
    tensors = blob["tensors"]
    if set(tensors) != set(expected):
        raise DataError(f"{path}: tensor names differ from the model ({sorted(set(tensors) ^ set(expected))})")
    for name, t in tensors.items():
        if list(t.shape) != blob["shapes"][name] or t.shape != expected[name].shape:
            raise DataError(f"{path}: tensor {name} has shape {tuple(t.shape)}, expected {tuple(expected[name].shape)}")
    model.load_state_dict(tensors)
    return model, blob["extra"]

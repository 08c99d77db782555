"""Location, time, and context token embeddings and input-sequence assembly.

Fixed encoders (the multi-scale location features, the slot sinusoid and the
day-fraction pair) are plain numpy functions so they can be checked against
hand evaluations; the learned projections and lookup tables live in
``InputEmbedder``.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .core import (
    DAY_TYPES,
    N_SLOTS,
    SECONDS_PER_DAY,
    ContextProfile,
    DataError,
    Dataset,
    GeoPoint,
    LocationVocab,
    Modality,
    Trajectory,
    project,
    slot_of,
    sort_visits,
)

# Context block layout; positions double as role indicators.
CTX_AGE, CTX_GENDER, CTX_PRIMARY, CTX_SECONDARY, CTX_DAY, CTX_MODALITY = range(6)
N_CONTEXT = 6

ABLATION_GROUPS = {
    "demographics": (CTX_AGE, CTX_GENDER),
    "anchors": (CTX_PRIMARY, CTX_SECONDARY),
    "date": (CTX_DAY,),
}


@dataclass(frozen=True)
class EmbeddingConfig:
    d: int = 64
    space2vec_scales: int = 16
    lambda_min: float = 100.0
    lambda_max: float = 50_000.0
    learned_location_table: bool = False

    def __post_init__(self):
        if self.d <= 0 or self.d % 2:
            raise ValueError(f"embedding dimension must be positive and even, got {self.d}")
        if self.space2vec_scales < 1:
            raise ValueError("space2vec_scales must be >= 1")
        if not 0 < self.lambda_min < self.lambda_max:
            raise ValueError("need 0 < lambda_min < lambda_max")

    @property
    def n_location_features(self) -> int:
        return 4 * self.space2vec_scales


def wavelengths(cfg: EmbeddingConfig) -> np.ndarray:
    """Geometrically spaced wavelengths from lambda_min to lambda_max."""
    s = cfg.space2vec_scales
    if s == 1:
        return np.array([cfg.lambda_min])
    ratio = cfg.lambda_max / cfg.lambda_min
    return cfg.lambda_min * ratio ** (np.arange(s) / (s - 1))


def location_features_xy(xy: np.ndarray, cfg: EmbeddingConfig) -> np.ndarray:
    """Multi-scale sinusoidal features of projected coordinates.

    Args:
        xy: array (..., 2) of metres east/north of the projection origin.

    Returns:
        array (..., 4 * scales) laid out per scale as
        ``[sin(x/l), cos(x/l), sin(y/l), cos(y/l)]``.
    """
    xy = np.asarray(xy, dtype=np.float64)
    lam = wavelengths(cfg)
    ax = xy[..., 0:1] / lam
    ay = xy[..., 1:2] / lam
    feats = np.stack([np.sin(ax), np.cos(ax), np.sin(ay), np.cos(ay)], axis=-1)
    return feats.reshape(*xy.shape[:-1], 4 * len(lam))


def location_features(p: GeoPoint, origin: GeoPoint, cfg: EmbeddingConfig) -> np.ndarray:
    """Pre-projection encoding of a single point relative to ``origin``."""
    return location_features_xy(np.array(project(p, origin)), cfg)


def encode_time_slot(s: int, d: int) -> np.ndarray:
    """Sinusoidal slot code with component j = sin or cos of s / 10000^(2j/d).

    Even j take the sine and odd j the cosine; the exponent uses j itself for
    both parities rather than the pairwise-shared index.
    """
    if not 1 <= s <= N_SLOTS:
        raise DataError(f"slot {s} outside 1..{N_SLOTS}")
    j = np.arange(d)
    angle = s / np.power(10000.0, 2.0 * j / d)
    return np.where(j % 2 == 0, np.sin(angle), np.cos(angle))


def day_fraction(timestamp: int) -> float:
    """(hour * 60 + minute) / 1440; seconds are discarded."""
    if not 0 <= timestamp < SECONDS_PER_DAY:
        raise DataError(f"timestamp {timestamp} outside [0, 86400)")
    hour, rem = divmod(int(timestamp), 3600)
    return (hour * 60 + rem // 60) / 1440.0


def _turn_sincos(minute: int) -> tuple[float, float]:
    # Reduce to the first quadrant so quarter-day points come out exact.
    quadrant, r = divmod(minute % 1440, 360)
    if r == 0:
        s, c = 0.0, 1.0
    else:
        a = 2 * math.pi * r / 1440.0
        s, c = math.sin(a), math.cos(a)
    for _ in range(quadrant):
        s, c = c, -s
    return s + 0.0, c + 0.0


def time_base_pair(timestamp: int) -> np.ndarray:
    """(sin 2πt, cos 2πt) of the day fraction; t and t ± 24 h give the same pair."""
    t = day_fraction(int(timestamp) % SECONDS_PER_DAY)
    return np.array(_turn_sincos(round(t * 1440)))


def encode_time_normalized(timestamp: int) -> np.ndarray:
    """Base pair of the normalised time, before the learned 2 -> d map."""
    return time_base_pair(timestamp)


def minute_table() -> np.ndarray:
    """Row m holds the base pair for minute m of the day."""
    return np.array([_turn_sincos(m) for m in range(1440)])


def encode_location(p: GeoPoint, origin: GeoPoint, cfg: EmbeddingConfig) -> np.ndarray:
    """Alias of :func:`location_features`: the fixed part of the location encoder."""
    return location_features(p, origin, cfg)


def slot_table(d: int) -> np.ndarray:
    """Row s holds encode_time_slot(s); row 0 (no slot) is zero."""
    table = np.zeros((N_SLOTS + 1, d))
    for s in range(1, N_SLOTS + 1):
        table[s] = encode_time_slot(s, d)
    return table


# ---------------------------------------------------------------------------
# Batched id form
# ---------------------------------------------------------------------------

@dataclass
class SequenceBatch:
    """Integer view of B trajectories, padded to a common visit count n.

    ``visit_tokens`` uses the vocab PAD id at padding; ``slots`` is 0 where a
    visit has no slot (GPS or padding).
    """

    context: torch.Tensor       # (B, 6) long
    visit_tokens: torch.Tensor  # (B, n) long
    timestamps: torch.Tensor    # (B, n) long
    slots: torch.Tensor         # (B, n) long
    visit_pad: torch.Tensor     # (B, n) bool, True = padding

    @property
    def n_visits(self) -> torch.Tensor:
        return (~self.visit_pad).sum(dim=1)

    def __len__(self) -> int:
        return self.context.shape[0]


def context_ids(profile: ContextProfile, date: dt.date, dataset: Dataset) -> list[int]:
    try:
        age = dataset.age_buckets.index(profile.age_bucket)
        gender = dataset.genders.index(profile.gender)
    except ValueError as exc:
        raise DataError(f"unknown profile value: {exc}") from None
    day = DAY_TYPES.index(dataset.calendar.day_type(date))
    modality = 0 if dataset.modality is Modality.CDR else 1
    return [age, gender, profile.primary_anchor, profile.secondary_anchor, day, modality]


@dataclass(frozen=True)
class SequenceItem:
    """One trajectory reduced to the arrays the model consumes."""

    context: tuple[int, ...]
    tokens: tuple[int, ...]
    timestamps: tuple[int, ...]
    slots: tuple[int, ...]


def sequence_item(traj: Trajectory, dataset: Dataset, max_visits: int | None = None) -> SequenceItem:
    """Canonicalise a trajectory: stable (timestamp, token) order; CDR drops out-of-window visits."""
    visits = sort_visits(traj.visits)
    if dataset.modality is Modality.CDR:
        visits = tuple(v for v in visits if slot_of(v.timestamp) is not None)
    if not visits:
        raise DataError(f"trajectory {traj.user_id}/{traj.date} has no usable visits")
    if max_visits is not None and len(visits) > max_visits:
        raise DataError(
            f"trajectory {traj.user_id}/{traj.date} has {len(visits)} visits; limit is {max_visits}"
        )
    slots = tuple((slot_of(v.timestamp) or 0) if dataset.modality is Modality.CDR else 0 for v in visits)
    return SequenceItem(
        tuple(context_ids(dataset.profile_for(traj), traj.date, dataset)),
        tuple(v.token_id for v in visits),
        tuple(v.timestamp for v in visits),
        slots,
    )


def collate(items: Sequence[SequenceItem], pad_id: int, n: int | None = None) -> SequenceBatch:
    n = max(len(it.tokens) for it in items) if n is None else n
    B = len(items)
    tokens = torch.full((B, n), pad_id, dtype=torch.long)
    times = torch.zeros((B, n), dtype=torch.long)
    slots = torch.zeros((B, n), dtype=torch.long)
    pad = torch.ones((B, n), dtype=torch.bool)
    for b, it in enumerate(items):
        k = len(it.tokens)
        tokens[b, :k] = torch.tensor(it.tokens)
        times[b, :k] = torch.tensor(it.timestamps)
        slots[b, :k] = torch.tensor(it.slots)
        pad[b, :k] = False
    context = torch.tensor([it.context for it in items], dtype=torch.long)
    return SequenceBatch(context, tokens, times, slots, pad)


# ---------------------------------------------------------------------------
# Learned embedder
# ---------------------------------------------------------------------------

@dataclass
class InputSequence:
    """Embedded sequence ``[B; A; T; l_1 + t_1; ...; l_n + t_n]``.

    The location and time parts of each visit token are kept separately so that
    masking can replace the location component while preserving time.
    """

    tokens: torch.Tensor        # (B, 6 + n, d)
    location: torch.Tensor      # (B, n, d)
    time: torch.Tensor          # (B, n, d)
    visit_tokens: torch.Tensor  # (B, n) long
    pad_mask: torch.Tensor      # (B, 6 + n) bool, True = padding
    maskable: torch.Tensor      # (B, 6 + n) bool

    @property
    def n_visits(self) -> int:
        return self.location.shape[1]

    def row(self, b: int) -> "InputSequence":
        return InputSequence(*(t[b:b + 1] for t in (
            self.tokens, self.location, self.time, self.visit_tokens, self.pad_mask, self.maskable)))


class InputEmbedder(nn.Module):
    """Turns a SequenceBatch into an InputSequence.

    Location vectors come from a learned linear projection of fixed
    multi-scale features (or a plain learned table if configured). Time is the
    fixed slot sinusoid for CDR and a learned 2->d map of the day-fraction pair
    for GPS. Context tokens are lookups, except anchors, which reuse the
    location encoder plus a learned role offset.
    """

    def __init__(self, vocab: LocationVocab, cfg: EmbeddingConfig, n_age: int, n_gender: int,
                 ablate: Sequence[str] = ()):
        super().__init__()
        self.cfg = cfg
        self.modality = vocab.modality
        self.pad_id, self.mask_id = vocab.pad_id, vocab.mask_id
        d = cfg.d
        if cfg.learned_location_table:
            self.location_table = nn.Embedding(vocab.size, d)
            nn.init.uniform_(self.location_table.weight, -1.0, 1.0)
            self.location_proj = None
        else:
            feats = np.zeros((vocab.size, cfg.n_location_features))
            feats[: vocab.n_places] = location_features_xy(np.array(vocab.xy()), cfg)
            self.register_buffer("location_feats", torch.tensor(feats, dtype=torch.float32))
            self.location_proj = nn.Linear(cfg.n_location_features, d, bias=False)
            self.location_table = None
        self.register_buffer("slot_code", torch.tensor(slot_table(d), dtype=torch.float32))
        self.register_buffer("minute_code", torch.tensor(minute_table(), dtype=torch.float32))
        self.time_proj = nn.Linear(2, d, bias=False)
        self.age = nn.Embedding(n_age, d)
        self.gender = nn.Embedding(n_gender, d)
        self.anchor_role = nn.Parameter(torch.randn(2, d))
        self.day_type = nn.Embedding(len(DAY_TYPES), d)
        self.modality_marker = nn.Embedding(2, d)
        self.null_context = nn.Parameter(torch.randn(N_CONTEXT, d))
        ablated = torch.zeros(N_CONTEXT, dtype=torch.bool)
        for group in ablate:
            if group not in ABLATION_GROUPS:
                raise ValueError(f"unknown ablation group {group!r}; choose from {sorted(ABLATION_GROUPS)}")
            ablated[list(ABLATION_GROUPS[group])] = True
        self.register_buffer("ablated", ablated, persistent=False)

    def encode_locations(self, tokens: torch.Tensor) -> torch.Tensor:
        if self.location_table is not None:
            out = self.location_table(tokens)
        else:
            out = self.location_proj(self.location_feats[tokens])
        special = (tokens == self.pad_id) | (tokens == self.mask_id)
        return out.masked_fill(special.unsqueeze(-1), 0.0)

    def encode_times(self, timestamps: torch.Tensor, slots: torch.Tensor) -> torch.Tensor:
        if self.modality is Modality.CDR:
            return self.slot_code[slots]
        minutes = torch.div(timestamps, 3600, rounding_mode="floor") * 60 + \
            torch.div(timestamps % 3600, 60, rounding_mode="floor")
        return self.time_proj(self.minute_code[minutes])

    def embed_context(self, context: torch.Tensor) -> torch.Tensor:
        """(B, 6) ids -> (B, 6, d) block in the fixed role order."""
        anchors = self.encode_locations(context[:, CTX_PRIMARY:CTX_SECONDARY + 1]) + self.anchor_role
        block = torch.cat([
            self.age(context[:, CTX_AGE]).unsqueeze(1),
            self.gender(context[:, CTX_GENDER]).unsqueeze(1),
            anchors,
            self.day_type(context[:, CTX_DAY]).unsqueeze(1),
            self.modality_marker(context[:, CTX_MODALITY]).unsqueeze(1),
        ], dim=1)
        null = self.null_context.unsqueeze(0).expand_as(block)
        return torch.where(self.ablated.view(1, -1, 1), null, block)

    def forward(self, batch: SequenceBatch) -> InputSequence:
        B, n = batch.visit_tokens.shape
        loc = self.encode_locations(batch.visit_tokens)
        tim = self.encode_times(batch.timestamps, batch.slots)
        keep = (~batch.visit_pad).unsqueeze(-1)
        loc = loc * keep
        tim = tim * keep
        tokens = torch.cat([self.embed_context(batch.context), loc + tim], dim=1)
        ctx_pad = torch.zeros((B, N_CONTEXT), dtype=torch.bool)
        pad_mask = torch.cat([ctx_pad, batch.visit_pad], dim=1)
        maskable = torch.cat([ctx_pad, ~batch.visit_pad], dim=1)
        return InputSequence(tokens, loc, tim, batch.visit_tokens, pad_mask, maskable)


def assemble_sequence(traj: Trajectory, dataset: Dataset, embedder: InputEmbedder,
                      max_len: int | None = None) -> InputSequence:
    """Embed one trajectory, padded to ``max_len`` total positions if given."""
    max_visits = None if max_len is None else max_len - N_CONTEXT
    item = sequence_item(traj, dataset, max_visits)
    batch = collate([item], dataset.vocab.pad_id, n=max_visits)
    return embedder(batch)

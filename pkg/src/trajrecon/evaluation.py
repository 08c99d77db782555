"""Hidden-visit scoring, predictor adapters, trajectory reconstruction and ablations."""

from __future__ import annotations

import bisect
import dataclasses
import datetime as dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .baselines import ABSENT, GapQuery, KnnModel, MarkovModel, knn_predict_many, markov_predict
from .core import (
    DAY_TYPES,
    N_SLOTS,
    SECONDS_PER_DAY,
    DataError,
    Dataset,
    Modality,
    Trajectory,
    make_visit,
    slot_of,
    slot_start,
    sort_visits,
)
from .embeddings import SequenceItem, collate, context_ids
from .masking import MaskPlan
from .model import ModelConfig, TrajectoryModel
from .synthgen import AnswerKey, HiddenVisit

log = logging.getLogger(__name__)

TOP_KS = (1, 3, 5)


@dataclass(frozen=True)
class RankedPrediction:
    user_id: str
    date: str
    time_or_slot: int
    ranked: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.ranked)) != len(self.ranked):
            raise DataError(f"prediction {self.key} ranks a token twice")

    @property
    def key(self) -> tuple[str, str, int]:
        return self.user_id, self.date, self.time_or_slot


@dataclass
class EvalReport:
    n_targets: int
    accuracy: float
    top3: float
    top5: float
    n_missing: int = 0
    by_day_type: dict[str, dict] = field(default_factory=dict)
    by_archetype: dict[str, dict] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def table(self, title: str = "") -> str:
        rows = [("all", {"n": self.n_targets, "accuracy": self.accuracy, "top3": self.top3, "top5": self.top5})]
        rows += [(f"day:{k}", v) for k, v in sorted(self.by_day_type.items())]
        rows += [(f"archetype:{k}", v) for k, v in sorted(self.by_archetype.items())]
        lines = [title] if title else []
        lines.append(f"{'slice':<22}{'n':>8}{'acc':>9}{'top3':>9}{'top5':>9}")
        for name, r in rows:
            lines.append(f"{name:<22}{r['n']:>8}{r['accuracy']:>9.4f}{r['top3']:>9.4f}{r['top5']:>9.4f}")
        return "\n".join(lines)


def _summary(hits: np.ndarray) -> dict:
    n = len(hits)
    if n == 0:
        return {"n": 0, "accuracy": 0.0, "top3": 0.0, "top5": 0.0}
    return {"n": n, "accuracy": float(hits[:, 0].mean()), "top3": float(hits[:, 1].mean()),
            "top5": float(hits[:, 2].mean())}


def score(predictions: Iterable[RankedPrediction], key: AnswerKey, config: dict | None = None) -> EvalReport:
    """Accuracy and top-3/top-5 over every hidden visit; missing predictions count as wrong."""
    by_key: dict[tuple[str, str, int], RankedPrediction] = {}
    for p in predictions:
        if p.key in by_key:
            raise DataError(f"duplicate prediction for {p.key}")
        by_key[p.key] = p
    rows, day_types, archetypes = [], [], []
    missing = 0
    for e in key.entries:
        p = by_key.get(e.key)
        if p is None:
            missing += 1
            rows.append((False, False, False))
        else:
            rows.append(tuple(e.token_id in p.ranked[:k] for k in TOP_KS))
        day_types.append(key.day_type.get((e.user_id, e.date.isoformat()), "unknown"))
        archetypes.append(key.archetype.get(e.user_id, "unknown"))
    if missing:
        log.warning("%d hidden visits have no prediction; counted as wrong", missing)
    hits = np.array(rows, dtype=bool).reshape(-1, 3)
    overall = _summary(hits)
    slices = {}
    for label, values in (("day", day_types), ("arch", archetypes)):
        values = np.array(values, dtype=object)
        slices[label] = {v: _summary(hits[values == v]) for v in sorted(set(values.tolist()))}
    return EvalReport(overall["n"], overall["accuracy"], overall["top3"], overall["top5"], missing,
                      slices["day"], slices["arch"], dict(config or {}))


# ---------------------------------------------------------------------------
# Prediction files
# ---------------------------------------------------------------------------

def save_predictions(preds: Sequence[RankedPrediction], vocab, path: str | Path) -> None:
    lines = [json.dumps({"user": p.user_id, "date": p.date, "time_or_slot": p.time_or_slot,
                         "ranked": [vocab.place_of(t) for t in p.ranked]}, separators=(",", ":"))
             for p in preds]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_predictions(path: str | Path, vocab) -> list[RankedPrediction]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(RankedPrediction(str(obj["user"]), str(obj["date"]), int(obj["time_or_slot"]),
                                            tuple(vocab.token_of(p) for p in obj["ranked"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# Predictors
# ---------------------------------------------------------------------------

def query_timestamp(e: HiddenVisit) -> int:
    return e.timestamp if e.slot_index is None else slot_start(e.slot_index)


def _observed_by_day(ds: Dataset) -> dict[tuple[str, str], Trajectory]:
    return {t.key: t for t in ds.trajectories}


def neighbours(visits: Sequence, timestamp: int) -> tuple[int, int]:
    """Tokens of the nearest observed visits strictly before and after ``timestamp``."""
    times = [v.timestamp for v in visits]
    i = bisect.bisect_left(times, timestamp)
    j = bisect.bisect_right(times, timestamp)
    prev = visits[i - 1].token_id if i > 0 else ABSENT
    nxt = visits[j].token_id if j < len(visits) else ABSENT
    return prev, nxt


def _gap_queries(ds: Dataset, key: AnswerKey) -> list[GapQuery]:
    days = _observed_by_day(ds)
    out = []
    for e in key.entries:
        t = days.get((e.user_id, e.date.isoformat()))
        visits = sort_visits(v for v in t.visits if v.observed) if t is not None else ()
        prev, nxt = neighbours(visits, query_timestamp(e))
        out.append(GapQuery(prev, nxt, query_timestamp(e), DAY_TYPES.index(ds.calendar.day_type(e.date))))
    return out


def _trim(ranked: Sequence[int], top_n: int) -> tuple[int, ...]:
    return tuple(int(t) for t in ranked[:top_n])


def predict_markov(model: MarkovModel, ds: Dataset, key: AnswerKey, top_n: int = 5) -> list[RankedPrediction]:
    return [RankedPrediction(e.user_id, e.date.isoformat(), e.time_or_slot,
                             _trim(markov_predict(model, None if q.prev == ABSENT else q.prev,
                                                  None if q.next == ABSENT else q.next), top_n))
            for e, q in zip(key.entries, _gap_queries(ds, key))]


def predict_knn(model: KnnModel, ds: Dataset, key: AnswerKey, top_n: int = 5) -> list[RankedPrediction]:
    ranks = knn_predict_many(model, _gap_queries(ds, key))
    return [RankedPrediction(e.user_id, e.date.isoformat(), e.time_or_slot, _trim(r, top_n))
            for e, r in zip(key.entries, ranks)]


def query_item(observed: Sequence, context: Sequence[int], timestamp: int, slot: int, mask_id: int,
               modality: Modality) -> tuple[SequenceItem, int]:
    """Observed visits plus one MASK query, in canonical order; returns the item and query index."""
    rows = [(v.timestamp, v.token_id, (slot_of(v.timestamp) or 0) if modality is Modality.CDR else 0)
            for v in observed]
    rows.append((timestamp, mask_id, slot))
    rows.sort(key=lambda r: (r[0], r[1]))
    idx = next(i for i, r in enumerate(rows) if r[1] == mask_id and r[0] == timestamp)
    return SequenceItem(tuple(context), tuple(r[1] for r in rows), tuple(r[0] for r in rows),
                        tuple(r[2] for r in rows)), idx


def _usable(visits: Sequence, ds: Dataset) -> tuple:
    visits = sort_visits(v for v in visits if v.observed)
    if ds.modality is Modality.CDR:
        visits = tuple(v for v in visits if slot_of(v.timestamp) is not None)
    return visits


@torch.no_grad()
def rank_queries(model: TrajectoryModel, ds: Dataset, queries: Sequence[tuple[Trajectory | None, str, dt.date, int]],
                 top_n: int = 5, batch_size: int = 512) -> list[tuple[int, ...]]:
    """Rank tokens for each (observed trajectory, user, date, timestamp) query, one query per pass."""
    model.eval()
    items, plans = [], []
    limit = model.cfg.max_visits - 1
    for traj, uid, date, ts in queries:
        visits = _usable(traj.visits, ds) if traj is not None else ()
        if len(visits) > limit:
            # Keep the observations closest in time to the query.
            visits = sort_visits(sorted(visits, key=lambda v: (abs(v.timestamp - ts), v.timestamp))[:limit])
        ctx = context_ids(ds.profiles[uid], date, ds)
        slot = (slot_of(ts) or 0) if ds.modality is Modality.CDR else 0
        item, q = query_item(visits, ctx, ts, slot, model.mask_id, ds.modality)
        items.append(item)
        marks = [False] * len(item.tokens)
        marks[q] = True
        plans.append(MaskPlan(tuple(marks), ((q, 0),)))
    out: list[tuple[int, ...]] = []
    k = min(top_n, model.n_places)
    for start in range(0, len(items), batch_size):
        logits, _ = model(collate(items[start:start + batch_size], model.pad_id), plans[start:start + batch_size])
        logits = logits.double().numpy()
        for row in logits:
            order = np.argsort(-row, kind="stable")[:k]
            out.append(tuple(int(t) for t in order))
    return out


def predict_transformer(model: TrajectoryModel, ds: Dataset, key: AnswerKey, top_n: int = 5,
                        batch_size: int = 512) -> list[RankedPrediction]:
    days = _observed_by_day(ds)
    queries = [(days.get((e.user_id, e.date.isoformat())), e.user_id, e.date, query_timestamp(e))
               for e in key.entries]
    ranks = rank_queries(model, ds, queries, top_n, batch_size)
    return [RankedPrediction(e.user_id, e.date.isoformat(), e.time_or_slot, r) for e, r in zip(key.entries, ranks)]


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------

def _query_to_timestamp(q: int, modality: Modality) -> int:
    if modality is Modality.CDR:
        if not 1 <= q <= N_SLOTS:
            raise DataError(f"slot {q} outside 1..{N_SLOTS}")
        return slot_start(q)
    if not 0 <= q < SECONDS_PER_DAY:
        raise DataError(f"timestamp {q} outside [0, 86400)")
    return q


def reconstruct(model: TrajectoryModel, ds: Dataset, traj: Trajectory, queries: Sequence[int],
                top_n: int = 5) -> tuple[Trajectory, list[dict]]:
    """Fill the queried slots (CDR) or timestamps (GPS) of one sparse day.

    Observed visits pass through unchanged. Each query not already observed
    becomes an ``observed=False`` visit carrying the rank-1 token, with the
    top-``top_n`` ranking attached as ``alternatives``. Invalid queries are
    reported and skipped.
    """
    errors = []
    if ds.modality is Modality.CDR:
        covered = {v.slot_index for v in traj.visits if v.observed and v.slot_index is not None}
    else:
        covered = {v.timestamp for v in traj.visits if v.observed}
    pending = []
    for q in sorted(set(queries)):
        try:
            ts = _query_to_timestamp(int(q), ds.modality)
        except DataError as exc:
            errors.append({"user_id": traj.user_id, "date": traj.date.isoformat(), "query": q, "error": str(exc)})
            continue
        if q not in covered:
            pending.append(ts)
    if not pending:
        return traj, errors
    ranks = rank_queries(model, ds, [(traj, traj.user_id, traj.date, ts) for ts in pending], top_n)
    added = [make_visit(r[0], ts, ds.modality, observed=False, alternatives=tuple(r)) for ts, r in zip(pending, ranks)]
    merged = sorted(list(traj.visits) + added, key=lambda v: (v.timestamp, not v.observed, v.token_id))
    return Trajectory(traj.user_id, traj.date, tuple(merged), traj.profile_ref), errors


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------

DEFAULT_ABLATIONS = (
    ("full", ()),
    ("-demographics", ("demographics",)),
    ("-anchors", ("anchors",)),
    ("-date", ("date",)),
)


@dataclass
class AblationRow:
    name: str
    removed: tuple[str, ...]
    report: EvalReport
    delta_accuracy: float = 0.0
    delta_top3: float = 0.0
    delta_top5: float = 0.0

    def to_json(self) -> dict:
        return {"name": self.name, "removed": list(self.removed), "accuracy": self.report.accuracy,
                "top3": self.report.top3, "top5": self.report.top5, "n_targets": self.report.n_targets,
                "delta_accuracy": self.delta_accuracy, "delta_top3": self.delta_top3, "delta_top5": self.delta_top5}


def fit_and_score(train_ds: Dataset, val_ds: Dataset | None, test_ds: Dataset, key: AnswerKey,
                  model_cfg: ModelConfig, train_cfg, out_dir: str | Path | None = None):
    """Train from scratch with ``train_cfg.seed`` and score on the test answer key."""
    from .training import train

    torch.manual_seed(train_cfg.seed)
    model = TrajectoryModel.for_dataset(train_ds, model_cfg)
    result = train(train_ds, model, train_cfg, val_ds, out_dir)
    report = score(predict_transformer(result.model, test_ds, key), key,
                   {"ablate": list(model_cfg.ablate), "seed": train_cfg.seed})
    return result, report


def run_ablation(model_cfg: ModelConfig, train_cfg, train_ds: Dataset, val_ds: Dataset | None, test_ds: Dataset,
                 key: AnswerKey, cells: Sequence[tuple[str, Sequence[str]]] = DEFAULT_ABLATIONS) -> list[AblationRow]:
    """One from-scratch training per cell, identical seeds, feature removal via null context tokens."""
    rows = []
    for name, removed in cells:
        cfg = dataclasses.replace(model_cfg, ablate=tuple(removed))
        _, report = fit_and_score(train_ds, val_ds, test_ds, key, cfg, train_cfg)
        rows.append(AblationRow(name, tuple(removed), report))
    base = next((r for r in rows if not r.removed), rows[0])
    for r in rows:
        r.delta_accuracy = r.report.accuracy - base.report.accuracy
        r.delta_top3 = r.report.top3 - base.report.top3
        r.delta_top5 = r.report.top5 - base.report.top5
    return rows

"""Markov-chain and k-nearest-neighbour gap fillers used as reference predictors.

Both operate on observed visits only. A gap is described by the nearest
observed visit before it (``prev``) and after it (``next``); either may be
absent at the ends of a day.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .core import DAY_TYPES, Dataset, Trajectory, sort_visits
from .embeddings import day_fraction

log = logging.getLogger(__name__)


def rank_scores(scores: np.ndarray) -> list[int]:
    """Token ids by descending score; equal scores fall back to ascending id."""
    ids = np.arange(len(scores))
    return np.lexsort((ids, -np.asarray(scores, dtype=np.float64))).tolist()


def observed_days(trajectories: Iterable[Trajectory]) -> list[tuple[Trajectory, list]]:
    return [(t, [v for v in sort_visits(t.visits) if v.observed]) for t in trajectories]


# ---------------------------------------------------------------------------
# Markov chain
# ---------------------------------------------------------------------------

@dataclass
class MarkovModel:
    counts: sparse.csr_matrix  # (P, P) consecutive observed-visit pairs
    alpha: float
    prior: np.ndarray          # (P,) marginal visit frequencies, sums to 1
    two_sided: bool = True

    def __post_init__(self):
        self._row_totals = np.asarray(self.counts.sum(axis=1)).ravel()
        self._csc = self.counts.tocsc()

    @property
    def n_places(self) -> int:
        return self.counts.shape[0]

    def _denominators(self) -> np.ndarray:
        return self._row_totals + self.alpha * self.n_places

    def row(self, i: int) -> np.ndarray:
        """Smoothed P(next = x | current = i); the prior for rows with no mass."""
        denom = self._row_totals[i] + self.alpha * self.n_places
        if denom <= 0:
            return self.prior.copy()
        return (self.counts.getrow(i).toarray().ravel() + self.alpha) / denom

    def column(self, j: int) -> np.ndarray:
        """Smoothed P(next = j | current = x) as a function of x."""
        denom = self._denominators()
        col = self._csc.getcol(j).toarray().ravel() + self.alpha
        empty = denom <= 0
        out = np.empty(self.n_places)
        out[~empty] = col[~empty] / denom[~empty]
        out[empty] = self.prior[j]
        return out

    def transition_matrix(self) -> np.ndarray:
        return np.stack([self.row(i) for i in range(self.n_places)])


def markov_fit(trajectories: Iterable[Trajectory], n_places: int, alpha: float = 1.0,
               two_sided: bool = True) -> MarkovModel:
    """Count consecutive observed-visit transitions within each day."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    src, dst = [], []
    freq = np.zeros(n_places)
    n_visits = 0
    for _, visits in observed_days(trajectories):
        for v in visits:
            freq[v.token_id] += 1
        n_visits += len(visits)
        for a, b in zip(visits, visits[1:]):
            src.append(a.token_id)
            dst.append(b.token_id)
    if n_visits == 0:
        raise ValueError("cannot fit a Markov chain to an empty corpus")
    counts = sparse.csr_matrix(
        (np.ones(len(src)), (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64))),
        shape=(n_places, n_places),
    )
    counts.sum_duplicates()
    return MarkovModel(counts, alpha, freq / freq.sum(), two_sided)


def markov_scores(model: MarkovModel, prev: int | None, nxt: int | None) -> np.ndarray:
    if not model.two_sided:
        nxt = None if prev is not None else nxt
    if prev is not None and nxt is not None:
        return model.row(prev) * model.column(nxt)
    if prev is not None:
        return model.row(prev)
    if nxt is not None:
        return model.column(nxt)
    return model.prior.copy()


def markov_predict(model: MarkovModel, prev: int | None, nxt: int | None) -> list[int]:
    """All place tokens ranked for the gap between ``prev`` and ``nxt``.

    Two known neighbours score x by T[prev, x] * T[x, next]; one neighbour
    uses its single factor; none falls back to the marginal prior.
    """
    return rank_scores(markov_scores(model, prev, nxt))


# ---------------------------------------------------------------------------
# k nearest neighbours
# ---------------------------------------------------------------------------

ABSENT = -1
DISTANCE_DECIMALS = 9


@dataclass(frozen=True)
class GapQuery:
    prev: int   # ABSENT when there is no observed visit before the gap
    next: int
    timestamp: int
    day_type: int  # index into DAY_TYPES


def time_pair(timestamp: int) -> tuple[float, float]:
    t = day_fraction(timestamp)
    return math.sin(2 * math.pi * t), math.cos(2 * math.pi * t)


def dense_features(q: GapQuery, n_places: int) -> np.ndarray:
    """Explicit feature vector: prev one-hot, next one-hot, time sin/cos, day-type one-hot."""
    f = np.zeros(2 * n_places + 2 + len(DAY_TYPES))
    if q.prev != ABSENT:
        f[q.prev] = 1.0
    if q.next != ABSENT:
        f[n_places + q.next] = 1.0
    f[2 * n_places:2 * n_places + 2] = time_pair(q.timestamp)
    f[2 * n_places + 2 + q.day_type] = 1.0
    return f


@dataclass
class KnnModel:
    prev: np.ndarray   # (N,) int, ABSENT allowed
    next: np.ndarray
    time: np.ndarray   # (N, 2) sin/cos of day fraction
    day: np.ndarray    # (N,) int
    label: np.ndarray  # (N,) int
    n_places: int
    k: int = 5
    prior_order: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.label)

    def query_arrays(self, queries: Sequence[GapQuery]):
        prev = np.array([q.prev for q in queries], dtype=np.int64)
        nxt = np.array([q.next for q in queries], dtype=np.int64)
        tim = np.array([time_pair(q.timestamp) for q in queries], dtype=np.float64).reshape(-1, 2)
        day = np.array([q.day_type for q in queries], dtype=np.int64)
        return prev, nxt, tim, day


def knn_bank_from_entries(entries: Sequence[tuple[GapQuery, int]], n_places: int, k: int = 5) -> KnnModel:
    if not entries:
        raise ValueError("KNN bank is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    qs = [q for q, _ in entries]
    labels = np.array([lab for _, lab in entries], dtype=np.int64)
    model = KnnModel(np.zeros(0), np.zeros(0), np.zeros((0, 2)), np.zeros(0), labels, n_places, k)
    model.prev, model.next, model.time, model.day = model.query_arrays(qs)
    freq = np.bincount(labels, minlength=n_places).astype(np.float64)
    model.prior_order = tuple(rank_scores(freq))
    return model


def gap_entries(trajectories: Iterable[Trajectory], dataset: Dataset) -> list[tuple[GapQuery, int]]:
    """One bank entry per observed visit, described by its observed neighbours."""
    entries = []
    for t, visits in observed_days(trajectories):
        day = DAY_TYPES.index(dataset.calendar.day_type(t.date))
        for i, v in enumerate(visits):
            prev = visits[i - 1].token_id if i > 0 else ABSENT
            nxt = visits[i + 1].token_id if i + 1 < len(visits) else ABSENT
            entries.append((GapQuery(prev, nxt, v.timestamp, day), v.token_id))
    return entries


def knn_fit(trajectories: Iterable[Trajectory], dataset: Dataset, k: int = 5) -> KnnModel:
    return knn_bank_from_entries(gap_entries(trajectories, dataset), dataset.vocab.n_places, k)


def _onehot_term(qa: np.ndarray, ba: np.ndarray) -> np.ndarray:
    """Squared distance between two one-hot-or-empty blocks: 0, 1 or 2."""
    qa = qa[:, None]
    ba = ba[None, :]
    q_abs, b_abs = qa == ABSENT, ba == ABSENT
    both = ~q_abs & ~b_abs
    return np.where(both & (qa != ba), 2.0, 0.0) + np.where(q_abs ^ b_abs, 1.0, 0.0)


def knn_distances(model: KnnModel, queries: Sequence[GapQuery]) -> np.ndarray:
    """(Q, N) Euclidean distances, summed in the same order as the dense feature vector."""
    qp, qn, qt, qd = model.query_arrays(queries)
    sq = _onehot_term(qp, model.prev) + _onehot_term(qn, model.next)
    sq = sq + (qt[:, None, 0] - model.time[None, :, 0]) ** 2
    sq = sq + (qt[:, None, 1] - model.time[None, :, 1]) ** 2
    sq = sq + np.where(qd[:, None] != model.day[None, :], 2.0, 0.0)
    # Equal time offsets on either side of the query give distances that agree
    # only up to rounding; snap them so the insertion-order tie rule applies.
    return np.sqrt(np.round(sq, DISTANCE_DECIMALS))


def nearest(dist: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest distances; ties broken by bank insertion order."""
    if k >= len(dist):
        return np.lexsort((np.arange(len(dist)), dist))
    kth = np.partition(dist, k - 1)[k - 1]
    less = np.flatnonzero(dist < kth)
    equal = np.flatnonzero(dist == kth)[: k - len(less)]
    chosen = np.concatenate([less, equal])
    return chosen[np.lexsort((chosen, dist[chosen]))]


def rank_neighbours(labels: np.ndarray, n_places: int, prior_order: Sequence[int]) -> list[int]:
    """Neighbour tokens by vote count (ties by id), then the rest in prior order."""
    votes = np.bincount(labels, minlength=n_places)
    voted = [t for t in rank_scores(votes) if votes[t] > 0]
    seen = set(voted)
    return voted + [t for t in prior_order if t not in seen]


def knn_predict_many(model: KnnModel, queries: Sequence[GapQuery], chunk: int = 32) -> list[list[int]]:
    if len(model) == 0:
        raise ValueError("KNN bank is empty")
    k = model.k
    if k > len(model):
        log.info("k=%d exceeds bank size %d; clamping", k, len(model))
        k = len(model)
    out = []
    for start in range(0, len(queries), chunk):
        dist = knn_distances(model, queries[start:start + chunk])
        for row in dist:
            idx = nearest(row, k)
            out.append(rank_neighbours(model.label[idx], model.n_places, model.prior_order))
    return out


def knn_predict(model: KnnModel, query: GapQuery) -> list[int]:
    """Tokens ranked by frequency among the k nearest bank entries."""
    return knn_predict_many(model, [query])[0]

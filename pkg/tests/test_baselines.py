import datetime as dt
import logging
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import cdr_dataset
from trajrecon.baselines import (
    ABSENT,
    DISTANCE_DECIMALS,
    GapQuery,
    dense_features,
    gap_entries,
    knn_bank_from_entries,
    knn_fit,
    knn_predict,
    knn_predict_many,
    markov_fit,
    markov_predict,
    rank_scores,
)
from trajrecon.core import DAY_TYPES, Trajectory, make_visit, slot_start


def day(tokens, hidden=(), date=dt.date(2024, 1, 2)):
    visits = tuple(make_visit(tok, slot_start(i + 1), "cdr", observed=i not in hidden) for i, tok in enumerate(tokens))
    return Trajectory("u", date, visits)


# --- Markov ------------------------------------------------------------------------

def brute_pair_counts(trajs, n):
    c = np.zeros((n, n))
    for t in trajs:
        seq = [v.token_id for v in sorted(t.visits, key=lambda v: v.timestamp) if v.observed]
        for i in range(len(seq) - 1):
            c[seq[i], seq[i + 1]] += 1
    return c


def test_pair_counts_on_hand_corpus():
    A, B = 0, 1
    m = markov_fit([day([A, B, A, B])], 3)
    c = m.counts.toarray()
    assert c[A, B] == 2 and c[B, A] == 1 and c.sum() == 3


def test_single_visit_days_contribute_nothing():
    m = markov_fit([day([2]), day([1])], 3)
    assert m.counts.nnz == 0


def test_hidden_visits_are_excluded():
    m = markov_fit([day([0, 1, 2], hidden=(1,))], 3)
    assert m.counts.toarray()[0, 2] == 1 and m.counts.toarray()[0, 1] == 0


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        markov_fit([], 4)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8))
def test_markov_counts_match_brute_force(seed, n):
    ds = cdr_dataset(n_users=2, n_days=5, n_places=n, visits_per_day=8, seed=seed)
    rng = np.random.default_rng(seed)
    trajs = []
    for t in ds.trajectories:  # hide a random subset of visits
        hidden = rng.random(len(t.visits)) < 0.3
        trajs.append(Trajectory(t.user_id, t.date, tuple(
            make_visit(v.token_id, v.timestamp, "cdr", observed=not h) for v, h in zip(t.visits, hidden))))
    if not any(v.observed for t in trajs for v in t.visits):
        return
    m = markov_fit(trajs, n)
    assert np.array_equal(m.counts.toarray(), brute_pair_counts(trajs, n))
    rows = m.transition_matrix()
    np.testing.assert_allclose(rows.sum(1), 1.0, atol=1e-12)


def test_deterministic_chain_fills_middle():
    A, B, C = 0, 1, 2
    m = markov_fit([day([A, B, C])] * 5, 3, alpha=0.1)
    ranked = markov_predict(m, A, C)
    T = m.transition_matrix()
    scores = [T[A, x] * T[x, C] for x in range(3)]
    assert ranked[0] == B == int(np.argmax(scores))


def test_no_neighbours_uses_marginal_order():
    m = markov_fit([day([2, 2, 2, 0, 1, 1])], 4)
    assert markov_predict(m, None, None) == [2, 1, 0, 3]


def test_uniform_transitions_rank_by_token_id():
    toks = [0, 1, 2, 0, 2, 1, 1, 0, 0, 2, 2, 1]  # alpha swamps the counts
    m = markov_fit([day(toks)], 3, alpha=1e9)
    assert markov_predict(m, 1, None) == [0, 1, 2]


def test_unseen_row_with_zero_alpha_falls_back_to_prior():
    m = markov_fit([day([0, 1, 0, 1, 0])], 3, alpha=0.0)
    np.testing.assert_array_equal(m.row(2), m.prior)
    assert markov_predict(m, 2, None) == rank_scores(m.prior)


def test_one_sided_mode_ignores_next_when_prev_known():
    m = markov_fit([day([0, 1, 2, 0, 2])], 3, two_sided=False)
    assert markov_predict(m, 0, 2) == markov_predict(m, 0, None)


def test_rank_scores_tie_break():
    assert rank_scores(np.array([0.5, 1.0, 0.5, 1.0])) == [1, 3, 0, 2]


# --- KNN ---------------------------------------------------------------------------

def random_bank(rng, size, n_places):
    entries = []
    for _ in range(size):
        prev = int(rng.integers(-1, n_places))
        nxt = int(rng.integers(-1, n_places))
        q = GapQuery(prev, nxt, int(rng.integers(0, 86_400)), int(rng.integers(len(DAY_TYPES))))
        entries.append((q, int(rng.integers(n_places))))
    return entries


def brute_knn(entries, query, n_places, k):
    f = dense_features(query, n_places)
    d = [(round(float(np.sum((dense_features(q, n_places) - f) ** 2)), DISTANCE_DECIMALS), i)
         for i, (q, _) in enumerate(entries)]
    d.sort()
    votes = Counter(entries[i][1] for _, i in d[:min(k, len(entries))])
    freq = Counter(lab for _, lab in entries)
    voted = sorted(votes, key=lambda t: (-votes[t], t))
    rest = sorted((t for t in range(n_places) if t not in votes), key=lambda t: (-freq[t], t))
    return voted + rest


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 7), st.integers(1, 60))
def test_knn_matches_exhaustive_sort(seed, k, size):
    rng = np.random.default_rng(seed)
    n_places = 6
    entries = random_bank(rng, size, n_places)
    model = knn_bank_from_entries(entries, n_places, k)
    queries = [q for q, _ in random_bank(rng, 10, n_places)] + [entries[0][0]]
    got = knn_predict_many(model, queries, chunk=4)
    for q, ranked in zip(queries, got):
        assert ranked == brute_knn(entries, q, n_places, k)


def test_knn_on_large_bank_matches_oracle():
    rng = np.random.default_rng(7)
    entries = random_bank(rng, 1000, 12)
    # quantising time creates many exact distance ties
    entries = [(GapQuery(q.prev, q.next, (q.timestamp // 7200) * 7200, q.day_type), lab) for q, lab in entries]
    model = knn_bank_from_entries(entries, 12, 5)
    for q, _ in random_bank(rng, 20, 12):
        q = GapQuery(q.prev, q.next, (q.timestamp // 7200) * 7200, q.day_type)
        assert knn_predict(model, q) == brute_knn(entries, q, 12, 5)


def test_singleton_bank():
    q = GapQuery(1, 2, 3600, 0)
    model = knn_bank_from_entries([(q, 4)], 5, 1)
    assert knn_predict(model, GapQuery(ABSENT, 0, 0, 2))[0] == 4


def test_exact_match_is_among_neighbours():
    rng = np.random.default_rng(1)
    entries = random_bank(rng, 30, 5)
    target = (GapQuery(3, 3, 43_200, 1), 2)
    entries.insert(17, target)
    model = knn_bank_from_entries(entries, 5, 1)
    assert knn_predict(model, target[0])[0] == 2


def test_k_larger_than_bank_is_clamped(caplog):
    entries = random_bank(np.random.default_rng(2), 3, 4)
    model = knn_bank_from_entries(entries, 4, 10)
    with caplog.at_level(logging.INFO):
        ranked = knn_predict(model, entries[0][0])
    assert "clamping" in caplog.text
    assert sorted(ranked) == [0, 1, 2, 3]


def test_empty_bank_and_bad_k_rejected():
    with pytest.raises(ValueError):
        knn_bank_from_entries([], 4)
    with pytest.raises(ValueError):
        knn_bank_from_entries(random_bank(np.random.default_rng(0), 2, 3), 3, 0)


def test_bank_uses_observed_neighbours_only():
    ds = cdr_dataset(n_users=1, n_days=1)
    t = ds.trajectories[0]
    hidden = Trajectory(t.user_id, t.date, tuple(
        make_visit(v.token_id, v.timestamp, "cdr", observed=i != 2) for i, v in enumerate(t.visits)))
    entries = gap_entries([hidden], ds)
    assert len(entries) == len(t.visits) - 1
    obs = [v for i, v in enumerate(t.visits) if i != 2]
    assert entries[2][0].prev == obs[1].token_id and entries[1][0].next == obs[2].token_id
    assert entries[0][0].prev == ABSENT and entries[-1][0].next == ABSENT
    assert len(knn_fit([hidden], ds)) == len(entries)

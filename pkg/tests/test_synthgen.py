import dataclasses
import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajrecon.core import DataError, DayType, N_SLOTS
from trajrecon.synthgen import (
    DEFAULT_ARCHETYPES,
    SparsifyConfig,
    WorldConfig,
    calibrate_event_rate,
    day_type_tv_distance,
    expected_observed_hours,
    generate_world,
    load_answer_key,
    mean_observed_hours,
    save_answer_key,
    sparsify,
)


@pytest.fixture(scope="module")
def cdr_world():
    return generate_world(WorldConfig(population=40, n_days=21, n_towers=40, seed=3))


@pytest.fixture(scope="module")
def gps_world():
    return generate_world(WorldConfig(modality="gps", population=6, n_days=3, extent_m=2_000.0, seed=1))


def test_same_seed_same_world(cdr_world):
    again = generate_world(cdr_world.config)
    assert again.truth == cdr_world.truth
    assert again.profiles == cdr_world.profiles
    other = generate_world(dataclasses.replace(cdr_world.config, seed=4))
    assert other.truth != cdr_world.truth


def test_truth_layout(cdr_world, gps_world):
    assert all(len(t.visits) == N_SLOTS for t in cdr_world.truth)
    assert [v.slot_index for v in cdr_world.truth[0].visits] == list(range(1, N_SLOTS + 1))
    assert all(len(t.visits) == 102 for t in gps_world.truth)
    keys = [(t.user_id, t.date) for t in cdr_world.truth]
    assert keys == sorted(keys)


def test_home_anchor_in_every_day(cdr_world, gps_world):
    for world in (cdr_world, gps_world):
        for t in world.truth:
            home = world.profiles[t.user_id].primary_anchor
            assert any(v.token_id == home for v in t.visits)


def test_weekday_work_rate_matches_archetype():
    world = generate_world(WorldConfig(population=120, n_days=84, n_towers=60, seed=5))
    rates = {a.name: a.work_prob for a in DEFAULT_ARCHETYPES if a.works}
    for name, p in rates.items():
        hits = n = 0
        for t in world.truth:
            if world.archetype_of[t.user_id] != name or world.calendar.day_type(t.date) is not DayType.WEEKDAY:
                continue
            work = world.profiles[t.user_id].secondary_anchor
            n += 1
            hits += any(v.token_id == work for v in t.visits)
        # coincidental visits to the work tower can only push the rate up
        assert hits / n >= p - 4 * math.sqrt(p * (1 - p) / n), name
        assert n > 500


def test_context_signal_under_default_archetypes(cdr_world):
    tv = day_type_tv_distance(cdr_world)
    assert set(tv) == {a.name for a in DEFAULT_ARCHETYPES}
    assert all(v > 0.1 for v in tv.values())


def test_archetypes_shape_demographics(cdr_world):
    for uid, name in cdr_world.archetype_of.items():
        a = next(a for a in DEFAULT_ARCHETYPES if a.name == name)
        p = cdr_world.profiles[uid]
        assert a.age_probs.get(p.age_bucket, 0) > 0 and a.gender_probs.get(p.gender, 0) > 0


@pytest.mark.parametrize("kw,field", [
    (dict(population=0), "population"),
    (dict(n_days=-1), "n_days"),
    (dict(modality="wifi"), "modality"),
    (dict(archetypes=DEFAULT_ARCHETYPES[:1]), "archetypes"),
    (dict(archetypes=(dataclasses.replace(DEFAULT_ARCHETYPES[0], n_leisure=0),) + DEFAULT_ARCHETYPES[1:]),
     "n_leisure"),
])
def test_invalid_world_rejected(kw, field):
    with pytest.raises(DataError, match=field):
        generate_world(WorldConfig(**kw))


# --- sparsify ----------------------------------------------------------------------

def assert_partition(world, ds, key):
    hidden = key.for_day()
    observed = {(t.user_id, t.date.isoformat()): t for t in ds.trajectories}
    for t in world.truth:
        k = (t.user_id, t.date.isoformat())
        if k not in observed:
            continue
        got = sorted([(v.timestamp, v.token_id) for v in observed[k].visits]
                     + [(h.timestamp, h.token_id) for h in hidden.get(k, [])])
        assert got == sorted((v.timestamp, v.token_id) for v in t.visits)
    assert set(hidden) <= set(observed)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([None, 0.05, 0.3, 0.9]))
def test_cdr_partition(cdr_world, seed, p):
    ds, key = sparsify(cdr_world, SparsifyConfig(slot_observe_prob=p), seed=seed)
    assert_partition(cdr_world, ds, key)
    assert all(len(t.visits) >= 1 for t in ds.trajectories)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.floats(10.0, 200.0), st.floats(0.0, 200.0))
def test_gps_partition(gps_world, seed, on, off):
    cfg = SparsifyConfig(mode="gps_dropout", mean_observed_min=on, mean_missing_min=off)
    ds, key = sparsify(gps_world, cfg, seed=seed)
    assert_partition(gps_world, ds, key)


def test_full_observation_is_identity(cdr_world, gps_world):
    ds, key = sparsify(cdr_world, SparsifyConfig(slot_observe_prob=1.0))
    assert ds.trajectories == cdr_world.truth and len(key) == 0
    ds, key = sparsify(gps_world, SparsifyConfig(mode="gps_dropout", mean_missing_min=0.0))
    assert ds.trajectories == gps_world.truth and len(key) == 0


def test_sparsify_is_deterministic(cdr_world):
    a = sparsify(cdr_world, seed=9)
    b = sparsify(cdr_world, seed=9)
    c = sparsify(cdr_world, seed=10)
    assert a[0].trajectories == b[0].trajectories and a[1].entries == b[1].entries
    assert a[0].trajectories != c[0].trajectories


def test_empty_days_resampled_then_dropped(cdr_world, caplog):
    cfg = SparsifyConfig(slot_observe_prob=0.002)
    ds, key = sparsify(cdr_world, cfg, seed=0)
    assert len(ds.trajectories) < len(cdr_world.truth)
    assert "dropped" in caplog.text
    assert_partition(cdr_world, ds, key)


def test_mode_and_modality_must_agree(cdr_world):
    with pytest.raises(DataError, match="does not match"):
        sparsify(cdr_world, SparsifyConfig(mode="gps_dropout"))


@pytest.mark.parametrize("kw", [dict(mode="x"), dict(slot_observe_prob=0.0), dict(mean_observed_hours=0.0),
                                dict(mean_observed_hours=18.0), dict(activity_shape=0.0)])
def test_invalid_sparsify_config(cdr_world, kw):
    with pytest.raises(DataError, match="sparsify"):
        sparsify(cdr_world, SparsifyConfig(**kw))


def test_answer_key_tags(cdr_world):
    ds, key = sparsify(cdr_world, seed=1)
    assert set(key.day_type) == {(t.user_id, t.date.isoformat()) for t in ds.trajectories}
    for (uid, date), dtype in key.day_type.items():
        assert dtype == cdr_world.calendar.day_type(dt.date.fromisoformat(date)).value
    assert key.archetype == cdr_world.archetype_of
    assert all(e.slot_index is not None for e in key.entries)


def test_answer_key_round_trip(cdr_world, gps_world, tmp_path):
    for world, cfg in ((cdr_world, SparsifyConfig()), (gps_world, SparsifyConfig(mode="gps_dropout"))):
        ds, key = sparsify(world, cfg, seed=2)
        save_answer_key(key, world.vocab, tmp_path / "k.jsonl")
        back = load_answer_key(tmp_path / "k.jsonl", world.vocab)
        assert sorted(back.entries, key=lambda e: e.key) == sorted(key.entries, key=lambda e: e.key)
        assert back.day_type == key.day_type
        assert back.archetype == {u: a for u, a in key.archetype.items() if u in {k[0] for k in key.day_type}}


def test_answer_key_rejects_inconsistent_slot(cdr_world, tmp_path):
    ds, key = sparsify(cdr_world, seed=2)
    save_answer_key(key, cdr_world.vocab, tmp_path / "k.jsonl")
    text = (tmp_path / "k.jsonl").read_text().splitlines()
    text[0] = text[0].replace('"slot_index":', '"slot_index":99,"x":', 1)
    (tmp_path / "k.jsonl").write_text("\n".join(text) + "\n")
    with pytest.raises(DataError, match=":1:"):
        load_answer_key(tmp_path / "k.jsonl", cdr_world.vocab)


# --- calibration -------------------------------------------------------------------

@pytest.mark.parametrize("target", [2.0, 5.0, 9.0])
def test_calibrated_rate_hits_target_in_expectation(target):
    rate = calibrate_event_rate(target, 12.0)
    assert expected_observed_hours(rate, 12.0) == pytest.approx(target, abs=1e-9)


@pytest.mark.parametrize("shape", [2.0, 12.0, 1e4])
def test_expected_hours_against_quantile_sum(shape):
    # Average the conditional closed form over gamma quantiles instead of integrating.
    from scipy import stats
    rate = 0.1
    m = stats.gamma(shape, scale=1 / shape).ppf((np.arange(200_000) + 0.5) / 200_000)
    p_empty = np.exp(-N_SLOTS * rate * m)
    hours = 17 * (1 - np.exp(-2 * rate * m))
    want = np.mean((1 + p_empty) * hours) / np.mean(1 - p_empty ** 2)
    assert expected_observed_hours(rate, shape) == pytest.approx(want, rel=1e-4)


def test_empirical_mean_close_to_target(cdr_world):
    ds, _ = sparsify(cdr_world, SparsifyConfig(), seed=0)
    assert abs(mean_observed_hours(ds) - 5.0) < 0.4  # ~800 user-days; the tight check lives in acceptance

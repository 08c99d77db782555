import datetime as dt

import numpy as np
import pytest
import torch

from trajrecon.core import (
    ContextProfile,
    Dataset,
    GeoPoint,
    HolidayCalendar,
    Trajectory,
    build_grid_vocab,
    build_tower_vocab,
    make_visit,
    slot_start,
)
from trajrecon.embeddings import EmbeddingConfig
from trajrecon.encoder import EncoderConfig
from trajrecon.model import ModelConfig


def towers(n=6, seed=0):
    rng = np.random.default_rng(seed)
    return [(f"T{i}", GeoPoint(0.30 + 0.02 * rng.random(), 32.55 + 0.02 * rng.random())) for i in range(n)]


def cdr_dataset(n_users=3, n_days=4, n_places=6, visits_per_day=5, seed=0, holidays=()):
    """Small random CDR dataset with one visit per distinct slot."""
    rng = np.random.default_rng(seed)
    vocab = build_tower_vocab(towers(n_places, seed))
    profiles, trajs = {}, []
    start = dt.date(2024, 1, 1)
    for u in range(n_users):
        uid = f"u{u}"
        profiles[uid] = ContextProfile(("18-29", "30-44")[u % 2], ("female", "male")[u % 2],
                                       int(rng.integers(n_places)), int(rng.integers(n_places)))
        for d in range(n_days):
            slots = np.sort(rng.choice(np.arange(1, 35), size=visits_per_day, replace=False))
            visits = tuple(make_visit(int(rng.integers(n_places)), slot_start(int(s)), vocab.modality)
                           for s in slots)
            trajs.append(Trajectory(uid, start + dt.timedelta(days=d), visits))
    cal = HolidayCalendar(frozenset(dt.date.fromisoformat(h) for h in holidays))
    return Dataset(vocab, trajs, profiles, cal)


def gps_dataset(n_users=2, n_days=2, visits_per_day=6, seed=0):
    rng = np.random.default_rng(seed)
    vocab = build_grid_vocab((GeoPoint(0.30, 32.55), GeoPoint(0.305, 32.555)), 100.0)
    profiles, trajs = {}, []
    for u in range(n_users):
        uid = f"g{u}"
        profiles[uid] = ContextProfile("30-44", "male", 0, vocab.n_places - 1)
        for d in range(n_days):
            times = np.sort(rng.choice(86_400, size=visits_per_day, replace=False))
            visits = tuple(make_visit(int(rng.integers(vocab.n_places)), int(t), vocab.modality) for t in times)
            trajs.append(Trajectory(uid, dt.date(2024, 3, 4 + d), visits))
    return Dataset(vocab, trajs, profiles, HolidayCalendar())


def tiny_model_config(d=16, heads=2, layers=1, max_len=48, dropout=0.0, **kw):
    return ModelConfig(
        embedding=EmbeddingConfig(d=d, space2vec_scales=4, lambda_min=100.0, lambda_max=20_000.0),
        encoder=EncoderConfig(layers=layers, heads=heads, d_ff=2 * d, dropout=dropout),
        max_len=max_len,
        **kw,
    )


@pytest.fixture
def small_cdr():
    return cdr_dataset()


@pytest.fixture
def small_gps():
    return gps_dataset()


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


def overfit_dataset(n_sequences=32, seed=0):
    """First ``n_sequences`` user-days of a small synthetic world."""
    from trajrecon.synthgen import SparsifyConfig, WorldConfig, generate_world, sparsify
    world = generate_world(WorldConfig(population=4, n_days=8, n_towers=30, seed=seed))
    ds, _ = sparsify(world, SparsifyConfig(), seed=seed)
    keep = [t for t in ds.trajectories if len(t.visits) >= 2][:n_sequences]
    return Dataset(ds.vocab, keep, ds.profiles, ds.calendar)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])

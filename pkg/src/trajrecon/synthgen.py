"""Synthetic ground-truth mobility with user routines, plus CDR/GPS sparsification.

Each user belongs to a routine archetype that also drives their age bucket and
gender, so demographics carry signal about schedules and leisure places.
Weekdays follow home -> work -> (leisure) -> home; weekends and holidays are
leisure-heavy. Ground truth lives on a 10-minute lattice over 06:00-23:00;
CDR truth is one visit per half-hour slot, GPS truth one visit per lattice
point with second-level jitter.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate, optimize, stats

from .core import (
    CDR_WINDOW_END,
    CDR_WINDOW_START,
    DAY_TYPES,
    DEFAULT_AGE_BUCKETS,
    DEFAULT_GENDERS,
    N_SLOTS,
    SLOT_SECONDS,
    ContextProfile,
    DataError,
    Dataset,
    DayType,
    GeoPoint,
    HolidayCalendar,
    LocationVocab,
    Modality,
    Trajectory,
    Visit,
    build_grid_vocab,
    build_tower_vocab,
    make_visit,
    project,
    slot_of,
    slot_start,
    unproject,
)

log = logging.getLogger(__name__)

LATTICE_SECONDS = 600
LATTICE = np.arange(CDR_WINDOW_START, CDR_WINDOW_END, LATTICE_SECONDS)  # 102 points
HOURS_IN_WINDOW = (CDR_WINDOW_END - CDR_WINDOW_START) // 3600  # 17


@dataclass(frozen=True)
class Archetype:
    name: str
    weight: float
    age_probs: dict[str, float]
    gender_probs: dict[str, float]
    works: bool = True
    work_prob: float = 0.95        # weekday attendance
    work_start: tuple[float, float] = (8.5, 0.5)  # hours: mean, sd
    work_end: tuple[float, float] = (17.5, 0.5)
    leisure_before_work: bool = False
    leisure_prob_weekday: float = 0.3
    leisure_prob_weekend: float = 0.8
    n_leisure: int = 6             # size of each of the weekday and weekend leisure pools


DEFAULT_ARCHETYPES = (
    Archetype("office", 0.30, {"30-44": 0.6, "45-59": 0.4}, {"female": 0.5, "male": 0.5},
              work_start=(8.5, 0.4), work_end=(17.5, 0.4), leisure_prob_weekday=0.3),
    Archetype("shift", 0.20, {"18-29": 0.6, "30-44": 0.4}, {"female": 0.2, "male": 0.8},
              work_start=(6.5, 0.25), work_end=(15.0, 0.4), leisure_prob_weekday=0.5),
    Archetype("student", 0.20, {"<18": 0.7, "18-29": 0.3}, {"female": 0.5, "male": 0.5},
              work_prob=0.97, work_start=(7.5, 0.25), work_end=(14.0, 0.4), leisure_prob_weekday=0.6,
              leisure_prob_weekend=0.9),
    Archetype("vendor", 0.15, {"18-29": 0.5, "30-44": 0.5}, {"female": 0.7, "male": 0.3},
              work_prob=0.9, work_start=(13.0, 0.4), work_end=(21.5, 0.4), leisure_before_work=True,
              leisure_prob_weekday=0.5, leisure_prob_weekend=0.6),
    Archetype("home", 0.15, {"60+": 0.8, "45-59": 0.2}, {"female": 0.6, "male": 0.4},
              works=False, work_prob=0.0, leisure_prob_weekday=0.6, leisure_prob_weekend=0.95),
)

DEFAULT_CENTER = GeoPoint(0.3136, 32.5811)


@dataclass(frozen=True)
class WorldConfig:
    modality: str = "cdr"
    population: int = 248
    n_days: int = 60
    start_date: str = "2024-01-01"
    holidays: tuple[str, ...] = ("2024-01-01", "2024-01-26", "2024-02-16")
    center: tuple[float, float] = (DEFAULT_CENTER.lat, DEFAULT_CENTER.lon)
    n_towers: int = 120            # cdr
    extent_m: float = 12_000.0     # side of the square study area
    cell_size_m: float = 100.0     # gps
    weekend_shift: float = 0.9     # fraction of working days dropped on weekends/holidays
    archetypes: tuple[Archetype, ...] = DEFAULT_ARCHETYPES
    seed: int = 42

    def validate(self) -> None:
        if self.modality not in ("cdr", "gps"):
            raise DataError(f"modality: expected 'cdr' or 'gps', got {self.modality!r}")
        for name in ("population", "n_days"):
            if getattr(self, name) < 1:
                raise DataError(f"{name}: must be >= 1, got {getattr(self, name)}")
        if self.extent_m <= 0 or self.cell_size_m <= 0:
            raise DataError("extent_m and cell_size_m must be positive")
        if self.modality == "cdr" and self.n_towers < 2:
            raise DataError("n_towers: need at least 2 towers")
        if not 0 <= self.weekend_shift <= 1:
            raise DataError("weekend_shift: must lie in [0, 1]")
        if len(self.archetypes) < 2:
            raise DataError("archetypes: need at least 2 so context carries signal")
        for a in self.archetypes:
            for label, probs in (("age_probs", a.age_probs), ("gender_probs", a.gender_probs)):
                if not probs or any(p < 0 for p in probs.values()) or sum(probs.values()) <= 0:
                    raise DataError(f"archetypes.{a.name}.{label}: invalid distribution")
            if set(a.age_probs) - set(DEFAULT_AGE_BUCKETS):
                raise DataError(f"archetypes.{a.name}.age_probs: unknown bucket")
            if set(a.gender_probs) - set(DEFAULT_GENDERS):
                raise DataError(f"archetypes.{a.name}.gender_probs: unknown gender")
            if a.weight <= 0:
                raise DataError(f"archetypes.{a.name}.weight: must be positive")
            if not (0 <= a.work_prob <= 1 and 0 <= a.leisure_prob_weekday <= 1 and 0 <= a.leisure_prob_weekend <= 1):
                raise DataError(f"archetypes.{a.name}: probabilities must lie in [0, 1]")
            if a.n_leisure < 1 and (a.leisure_prob_weekday > 0 or a.leisure_prob_weekend > 0 or not a.works):
                raise DataError(f"archetypes.{a.name}.n_leisure: zero leisure places but leisure is possible")

    def dates(self) -> list[dt.date]:
        start = dt.date.fromisoformat(self.start_date)
        return [start + dt.timedelta(days=i) for i in range(self.n_days)]


@dataclass(frozen=True)
class SparsifyConfig:
    mode: str = "cdr_event"          # or "gps_dropout"
    mean_observed_hours: float = 5.0
    activity_shape: float = 12.0     # gamma shape of per-user call activity (mean 1)
    slot_observe_prob: float | None = None  # bypasses calibration: each slot observed independently
    mean_observed_min: float = 90.0  # gps: mean length of an observed interval
    mean_missing_min: float = 60.0   # gps: mean length of a dropout; 0 disables dropout

    def validate(self) -> None:
        if self.mode not in ("cdr_event", "gps_dropout"):
            raise DataError(f"sparsify.mode: expected 'cdr_event' or 'gps_dropout', got {self.mode!r}")
        if not 0 < self.mean_observed_hours <= HOURS_IN_WINDOW:
            raise DataError("sparsify.mean_observed_hours: must lie in (0, 17]")
        if self.slot_observe_prob is not None and not 0 < self.slot_observe_prob <= 1:
            raise DataError("sparsify.slot_observe_prob: must lie in (0, 1]")
        if self.activity_shape <= 0 or self.mean_observed_min <= 0 or self.mean_missing_min < 0:
            raise DataError("sparsify: shape and interval means must be positive")


@dataclass
class World:
    config: WorldConfig
    vocab: LocationVocab
    profiles: dict[str, ContextProfile]
    archetype_of: dict[str, str]
    truth: list[Trajectory]  # canonical (user, date) order
    calendar: HolidayCalendar

    def dataset(self) -> Dataset:
        return Dataset(self.vocab, list(self.truth), dict(self.profiles), self.calendar)


@dataclass(frozen=True)
class HiddenVisit:
    user_id: str
    date: dt.date
    token_id: int
    timestamp: int
    slot_index: int | None

    @property
    def time_or_slot(self) -> int:
        return self.slot_index if self.slot_index is not None else self.timestamp

    @property
    def key(self) -> tuple[str, str, int]:
        return self.user_id, self.date.isoformat(), self.time_or_slot


@dataclass
class AnswerKey:
    entries: list[HiddenVisit] = field(default_factory=list)
    day_type: dict[tuple[str, str], str] = field(default_factory=dict)
    archetype: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def for_day(self) -> dict[tuple[str, str], list[HiddenVisit]]:
        out: dict[tuple[str, str], list[HiddenVisit]] = {}
        for e in self.entries:
            out.setdefault((e.user_id, e.date.isoformat()), []).append(e)
        return out

    def subset(self, users) -> "AnswerKey":
        keep = set(users)
        return AnswerKey([e for e in self.entries if e.user_id in keep],
                         {k: v for k, v in self.day_type.items() if k[0] in keep},
                         {u: a for u, a in self.archetype.items() if u in keep})


# ---------------------------------------------------------------------------
# World generation
# ---------------------------------------------------------------------------

def _choice(rng: np.random.Generator, probs: dict[str, float]) -> str:
    keys = sorted(probs)
    p = np.array([probs[k] for k in keys], dtype=np.float64)
    return keys[int(rng.choice(len(keys), p=p / p.sum()))]


def build_world_vocab(cfg: WorldConfig) -> LocationVocab:
    center = GeoPoint(*cfg.center)
    half = cfg.extent_m / 2
    sw = unproject(-half, -half, center)
    ne = unproject(half, half, center)
    if cfg.modality == "gps":
        return build_grid_vocab((sw, ne), cfg.cell_size_m)
    rng = np.random.default_rng([cfg.seed, 0xC0FFEE])
    # Towers are denser near the centre, like an urban network.
    xy = rng.normal(0.0, cfg.extent_m / 5, size=(cfg.n_towers, 2)).clip(-half, half)
    towers = [(f"T{i:03d}", unproject(float(x), float(y), center)) for i, (x, y) in enumerate(xy)]
    return build_tower_vocab(towers)


def _centrality_weights(vocab: LocationVocab, scale_m: float) -> np.ndarray:
    xy = np.array(vocab.xy())
    c = xy.mean(axis=0)
    w = np.exp(-((xy - c) ** 2).sum(axis=1) / (2 * scale_m ** 2))
    return w / w.sum()


@dataclass(frozen=True)
class _Pools:
    weekday: tuple[int, ...]
    weekend: tuple[int, ...]


def _leisure_pools(cfg: WorldConfig, vocab: LocationVocab) -> dict[str, _Pools]:
    rng = np.random.default_rng([cfg.seed, 0xBEEF])
    w = _centrality_weights(vocab, cfg.extent_m / 4)
    pools = {}
    for a in cfg.archetypes:
        k = min(a.n_leisure, vocab.n_places // 2)
        picks = rng.choice(vocab.n_places, size=2 * k, replace=False, p=w) if k else np.array([], dtype=int)
        pools[a.name] = _Pools(tuple(int(x) for x in picks[:k]), tuple(int(x) for x in picks[k:]))
    return pools


def _zipf_pick(rng: np.random.Generator, pool: Sequence[int]) -> int:
    p = 1.0 / np.arange(1, len(pool) + 1)
    return int(pool[int(rng.choice(len(pool), p=p / p.sum()))])


def _hours(rng: np.random.Generator, spec: tuple[float, float], lo: float = 6.0, hi: float = 22.9) -> float:
    return float(np.clip(rng.normal(*spec), lo, hi))


def _day_stays(rng, a: Archetype, day_type: DayType, cfg: WorldConfig, home: int, work: int,
               secondary: int, pools: _Pools) -> list[tuple[float, int]]:
    """Ordered (start hour, place) stays; the day starts and ends at home."""
    weekend = day_type is not DayType.WEEKDAY
    work_p = a.work_prob * ((1.0 - cfg.weekend_shift) if weekend else 1.0)
    pool = pools.weekend if weekend else pools.weekday
    stays: list[tuple[float, int]] = [(0.0, home)]

    def leisure_place() -> int:
        if not a.works and rng.random() < 0.5:
            return secondary
        return _zipf_pick(rng, pool)

    if a.works and rng.random() < work_p:
        start = _hours(rng, a.work_start)
        end = max(start + 1.0, _hours(rng, a.work_end))
        if a.leisure_before_work and rng.random() < a.leisure_prob_weekday:
            l_start = _hours(rng, (start - 3.0, 0.5), hi=start - 1.0)
            stays.append((l_start, leisure_place()))
            stays.append((min(l_start + float(rng.uniform(1.0, 1.75)), start - 0.25), home))
        stays.append((start, work))
        stays.append((end, home))
        if not a.leisure_before_work and rng.random() < (a.leisure_prob_weekend if weekend else a.leisure_prob_weekday):
            dur = float(rng.uniform(1.0, 2.5))
            stays[-1] = (end, leisure_place())
            stays.append((min(end + dur, 22.9), home))
        return sorted(stays, key=lambda s: s[0])

    p_out = a.leisure_prob_weekend if weekend else a.leisure_prob_weekday
    if rng.random() < p_out:
        t = _hours(rng, (10.5 if weekend else 9.5, 1.0), hi=18.0)
        stays.append((t, leisure_place()))
        t += float(rng.uniform(2.5, 5.0) if weekend else rng.uniform(1.5, 3.0))
        if rng.random() < 0.5:
            stays.append((t, leisure_place()))
            t += float(rng.uniform(1.0, 2.0))
        stays.append((min(t, 22.9), home))
    return sorted(stays, key=lambda s: s[0])


def _location_at(stays: list[tuple[float, int]], seconds: np.ndarray) -> np.ndarray:
    starts = np.array([s * 3600 for s, _ in stays])
    places = np.array([p for _, p in stays])
    idx = np.searchsorted(starts, seconds, side="right") - 1
    return places[idx]


def ground_truth_visits(stays, modality: Modality, rng: np.random.Generator) -> tuple[Visit, ...]:
    lattice_loc = _location_at(stays, LATTICE)
    if modality is Modality.GPS:
        jitter = rng.integers(0, 60, size=len(LATTICE))
        return tuple(make_visit(int(tok), int(t + j), modality) for tok, t, j in zip(lattice_loc, LATTICE, jitter))
    visits = []
    per_slot = SLOT_SECONDS // LATTICE_SECONDS
    for s in range(1, N_SLOTS + 1):
        block = lattice_loc[(s - 1) * per_slot: s * per_slot]
        vals, counts = np.unique(block, return_counts=True)
        # Majority over the slot's lattice points; ties go to the earliest.
        best = [v for v, c in zip(vals, counts) if c == counts.max()]
        tok = next(int(v) for v in block if v in best)
        visits.append(make_visit(tok, slot_start(s), modality))
    return tuple(visits)


def generate_world(cfg: WorldConfig = WorldConfig()) -> World:
    """Profiles and ground-truth daily trajectories; deterministic given ``cfg.seed``."""
    cfg.validate()
    vocab = build_world_vocab(cfg)
    modality = vocab.modality
    calendar = HolidayCalendar(frozenset(dt.date.fromisoformat(d) for d in cfg.holidays))
    pools = _leisure_pools(cfg, vocab)
    work_w = _centrality_weights(vocab, cfg.extent_m / 6)
    weights = np.array([a.weight for a in cfg.archetypes])
    dates = cfg.dates()
    profiles, archetype_of, truth = {}, {}, []
    width = len(str(cfg.population - 1))
    for u in range(cfg.population):
        rng = np.random.default_rng([cfg.seed, 1, u])
        a = cfg.archetypes[int(rng.choice(len(cfg.archetypes), p=weights / weights.sum()))]
        uid = f"u{u:0{width}d}"
        home = int(rng.integers(vocab.n_places))
        if a.works:
            work = int(rng.choice(vocab.n_places, p=work_w))
            secondary = work
        else:
            pool = pools[a.name].weekday or pools[a.name].weekend
            secondary = _zipf_pick(rng, pool) if pool else home
            work = secondary
        profiles[uid] = ContextProfile(_choice(rng, a.age_probs), _choice(rng, a.gender_probs), home, secondary)
        archetype_of[uid] = a.name
        for date in dates:
            stays = _day_stays(rng, a, calendar.day_type(date), cfg, home, work, secondary, pools[a.name])
            truth.append(Trajectory(uid, date, ground_truth_visits(stays, modality, rng)))
    return World(cfg, vocab, profiles, archetype_of, truth, calendar)


# ---------------------------------------------------------------------------
# Sparsification
# ---------------------------------------------------------------------------

def _hour_slots() -> np.ndarray:
    """Hour index (0..16) of each slot 1..34."""
    return (np.arange(N_SLOTS) * SLOT_SECONDS) // 3600


def expected_observed_hours(rate: float, shape: float) -> float:
    """Mean distinct observed hours per kept user-day for a per-slot event rate.

    Per-user activity m ~ Gamma(shape, 1/shape). A day with no events is
    redrawn once and dropped if still empty, so kept days are conditioned on
    at least one observation.
    """
    def mean_hours(m):
        return HOURS_IN_WINDOW * (1 - math.exp(-2 * rate * m))

    def p_empty(m):
        return math.exp(-N_SLOTS * rate * m)

    pdf = stats.gamma(shape, scale=1 / shape).pdf
    num = integrate.quad(lambda m: (1 + p_empty(m)) * mean_hours(m) * pdf(m), 0, np.inf, limit=200)[0]
    den = integrate.quad(lambda m: (1 - p_empty(m) ** 2) * pdf(m), 0, np.inf, limit=200)[0]
    return num / den


def calibrate_event_rate(target_hours: float, shape: float) -> float:
    """Per-slot event rate whose expected distinct observed hours equals ``target_hours``."""
    return optimize.brentq(lambda r: expected_observed_hours(r, shape) - target_hours, 1e-6, 50.0, xtol=1e-12)


def observed_hours(visits: Sequence[Visit]) -> int:
    return len({v.timestamp // 3600 for v in visits if v.observed})


def _gps_observed(rng: np.random.Generator, times: np.ndarray, cfg: SparsifyConfig) -> np.ndarray:
    if cfg.mean_missing_min == 0:
        return np.ones(len(times), dtype=bool)
    on, off = cfg.mean_observed_min * 60, cfg.mean_missing_min * 60
    state = rng.random() < on / (on + off)
    t = float(CDR_WINDOW_START) - float(rng.exponential(on if state else off))
    edges, states = [], []
    while t < CDR_WINDOW_END:
        dur = float(rng.exponential(on if state else off))
        edges.append(t + dur)
        states.append(state)
        t += dur
        state = not state
    idx = np.searchsorted(np.array(edges), times, side="right")
    return np.array(states)[np.minimum(idx, len(states) - 1)]


def sparsify(world: World, cfg: SparsifyConfig = SparsifyConfig(), seed: int = 0) -> tuple[Dataset, AnswerKey]:
    """Split ground truth into observed visits and a hidden-visit answer key."""
    cfg.validate()
    modality = world.vocab.modality
    if (cfg.mode == "cdr_event") != (modality is Modality.CDR):
        raise DataError(f"sparsify.mode {cfg.mode!r} does not match world modality {modality.value!r}")
    rate = None
    if cfg.mode == "cdr_event" and cfg.slot_observe_prob is None:
        rate = calibrate_event_rate(cfg.mean_observed_hours, cfg.activity_shape)
    users = {uid: i for i, uid in enumerate(sorted(world.profiles))}
    rngs = {uid: np.random.default_rng([seed, 2, i]) for uid, i in users.items()}
    activity = {uid: float(rngs[uid].gamma(cfg.activity_shape, 1 / cfg.activity_shape)) for uid in users}

    observed, key = [], AnswerKey(archetype=dict(world.archetype_of))
    dropped = 0
    for traj in world.truth:
        rng = rngs[traj.user_id]
        times = np.array([v.timestamp for v in traj.visits])
        for _attempt in range(2):
            if cfg.mode == "gps_dropout":
                mask = _gps_observed(rng, times, cfg)
            else:
                p = cfg.slot_observe_prob
                if p is None:
                    p = 1 - math.exp(-rate * activity[traj.user_id])
                mask = rng.random(len(times)) < p
            if mask.any():
                break
        else:
            dropped += 1
            log.info("dropped %s/%s: no observations after resampling", traj.user_id, traj.date)
            continue
        obs = tuple(v for v, m in zip(traj.visits, mask) if m)
        observed.append(Trajectory(traj.user_id, traj.date, obs))
        day_key = (traj.user_id, traj.date.isoformat())
        key.day_type[day_key] = world.calendar.day_type(traj.date).value
        for v, m in zip(traj.visits, mask):
            if not m:
                key.entries.append(HiddenVisit(traj.user_id, traj.date, v.token_id, v.timestamp, v.slot_index))
    if dropped:
        log.warning("dropped %d user-days with no observations", dropped)
    ds = Dataset(world.vocab, observed, dict(world.profiles), world.calendar)
    return ds, key


def mean_observed_hours(ds: Dataset) -> float:
    return float(np.mean([observed_hours(t.visits) for t in ds.trajectories]))


def day_type_tv_distance(world: World) -> dict[str, float]:
    """Per archetype, total-variation distance between weekday and weekend/holiday token distributions."""
    out = {}
    n = world.vocab.n_places
    for name in sorted(set(world.archetype_of.values())):
        wd, we = np.zeros(n), np.zeros(n)
        for t in world.truth:
            if world.archetype_of[t.user_id] != name:
                continue
            target = wd if world.calendar.day_type(t.date) is DayType.WEEKDAY else we
            for v in t.visits:
                target[v.token_id] += 1
        if wd.sum() and we.sum():
            out[name] = 0.5 * float(np.abs(wd / wd.sum() - we / we.sum()).sum())
    return out


# ---------------------------------------------------------------------------
# Answer-key file
# ---------------------------------------------------------------------------

def save_answer_key(key: AnswerKey, vocab: LocationVocab, path: str | Path) -> None:
    by_day = key.for_day()
    lines = []
    for day_key in sorted(set(by_day) | set(key.day_type)):
        uid, date = day_key
        hidden = [
            {"place_id": vocab.place_of(e.token_id), "timestamp": e.timestamp, "slot_index": e.slot_index}
            for e in sorted(by_day.get(day_key, []), key=lambda e: e.timestamp)
        ]
        lines.append(json.dumps({
            "user_id": uid, "date": date, "day_type": key.day_type.get(day_key),
            "archetype": key.archetype.get(uid), "hidden": hidden,
        }, sort_keys=True, separators=(",", ":")))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_answer_key(path: str | Path, vocab: LocationVocab) -> AnswerKey:
    key = AnswerKey()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                date = dt.date.fromisoformat(obj["date"])
                uid = str(obj["user_id"])
                if obj.get("day_type") is not None:
                    key.day_type[(uid, obj["date"])] = obj["day_type"]
                if obj.get("archetype") is not None:
                    key.archetype[uid] = obj["archetype"]
                for h in obj["hidden"]:
                    ts = int(h["timestamp"])
                    slot = h.get("slot_index")
                    if slot is not None and slot != slot_of(ts):
                        raise DataError(f"slot {slot} does not contain timestamp {ts}")
                    key.entries.append(HiddenVisit(uid, date, vocab.token_of(h["place_id"]), ts, slot))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return key


def world_config_from_dict(d: dict) -> WorldConfig:
    d = dict(d)
    if "archetypes" in d:
        d["archetypes"] = tuple(
            Archetype(**{**a, "work_start": tuple(a.get("work_start", (8.5, 0.5))),
                         "work_end": tuple(a.get("work_end", (17.5, 0.5)))})
            for a in d["archetypes"]
        )
    for name in ("holidays", "center"):
        if name in d:
            d[name] = tuple(d[name])
    return WorldConfig(**d)


def world_config_to_dict(cfg: WorldConfig) -> dict:
    d = asdict(cfg)
    d["archetypes"] = [asdict(a) for a in cfg.archetypes]
    return d


def default_world_config(modality: str = "cdr", **overrides) -> WorldConfig:
    """Cohort sizes default to 248 users (CDR) and 586 users (GPS)."""
    base = WorldConfig(modality=modality, population=248 if modality == "cdr" else 586,
                       extent_m=12_000.0 if modality == "cdr" else 3_000.0)
    return replace(base, **overrides)


def default_sparsify_config(modality: str = "cdr", **overrides) -> SparsifyConfig:
    return replace(SparsifyConfig(mode="cdr_event" if modality == "cdr" else "gps_dropout"), **overrides)

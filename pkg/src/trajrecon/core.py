"""Domain types, location vocabularies, and the JSON-lines dataset format.

Everything else in the package consumes these types. Value objects are frozen
dataclasses and validate themselves on construction; the dataset loader
re-validates cross-references (tokens, anchors, profiles) and reports the first
offending line.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

EARTH_RADIUS_M = 6_371_008.8
SECONDS_PER_DAY = 86_400

CDR_WINDOW_START = 6 * 3600
CDR_WINDOW_END = 23 * 3600
SLOT_SECONDS = 30 * 60
N_SLOTS = (CDR_WINDOW_END - CDR_WINDOW_START) // SLOT_SECONDS  # 34

DEFAULT_AGE_EDGES = (18, 30, 45, 60)
DEFAULT_AGE_BUCKETS = ("<18", "18-29", "30-44", "45-59", "60+")
DEFAULT_GENDERS = ("female", "male")


class DataError(ValueError):
    """Raised when a dataset or one of its records violates an invariant."""


class Modality(str, Enum):
    CDR = "cdr"  # tower vocabulary, half-hour slots
    GPS = "gps"  # grid-cell vocabulary, continuous time of day


class DayType(str, Enum):
    WEEKDAY = "weekday"
    WEEKEND = "weekend"
    HOLIDAY = "holiday"


DAY_TYPES = (DayType.WEEKDAY, DayType.WEEKEND, DayType.HOLIDAY)


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        if not (math.isfinite(self.lat) and -90.0 <= self.lat <= 90.0):
            raise DataError(f"latitude {self.lat!r} outside [-90, 90]")
        if not (math.isfinite(self.lon) and -180.0 <= self.lon <= 180.0):
            raise DataError(f"longitude {self.lon!r} outside [-180, 180]")


def project(point: GeoPoint, origin: GeoPoint) -> tuple[float, float]:
    """Local equirectangular projection: metres east and north of ``origin``."""
    x = math.radians(point.lon - origin.lon) * math.cos(math.radians(origin.lat)) * EARTH_RADIUS_M
    y = math.radians(point.lat - origin.lat) * EARTH_RADIUS_M
    return x, y


def unproject(x: float, y: float, origin: GeoPoint) -> GeoPoint:
    lat = origin.lat + math.degrees(y / EARTH_RADIUS_M)
    lon = origin.lon + math.degrees(x / (EARTH_RADIUS_M * math.cos(math.radians(origin.lat))))
    return GeoPoint(lat, lon)


# ---------------------------------------------------------------------------
# Time slots
# ---------------------------------------------------------------------------

def slot_of(timestamp: int) -> int | None:
    """Half-hour slot (1..34) containing ``timestamp``, or None outside 06:00-23:00.

    Slots are half-open, so 06:00:00 is slot 1 and 23:00:00 is out of window.
    """
    if not 0 <= timestamp < SECONDS_PER_DAY:
        raise DataError(f"timestamp {timestamp} outside [0, 86400)")
    if timestamp < CDR_WINDOW_START or timestamp >= CDR_WINDOW_END:
        return None
    return int(timestamp - CDR_WINDOW_START) // SLOT_SECONDS + 1


def slot_start(slot: int) -> int:
    if not 1 <= slot <= N_SLOTS:
        raise DataError(f"slot {slot} outside 1..{N_SLOTS}")
    return CDR_WINDOW_START + (slot - 1) * SLOT_SECONDS


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    origin: GeoPoint  # south-west corner
    cell_size_m: float
    n_rows: int
    n_cols: int

    def cell_of(self, point: GeoPoint) -> tuple[int, int] | None:
        x, y = project(point, self.origin)
        col = math.floor(x / self.cell_size_m)
        row = math.floor(y / self.cell_size_m)
        if 0 <= row < self.n_rows and 0 <= col < self.n_cols:
            return row, col
        return None

    def centroid(self, row: int, col: int) -> GeoPoint:
        return unproject((col + 0.5) * self.cell_size_m, (row + 0.5) * self.cell_size_m, self.origin)


def grid_place_id(row: int, col: int) -> str:
    return f"r{row}_c{col}"


@dataclass(frozen=True)
class PlaceEntry:
    token_id: int
    place_id: str
    centroid: GeoPoint


class LocationVocab:
    """Bijection between places and dense integer tokens.

    Place tokens occupy ``0..n_places-1``; PAD and MASK are appended after them,
    so a prediction head over places can index its logits by token id directly.
    """

    def __init__(
        self,
        places: Sequence[tuple[str, GeoPoint]],
        modality: Modality,
        grid: GridSpec | None = None,
    ):
        if not places:
            raise DataError("vocabulary needs at least one place")
        self.modality = Modality(modality)
        self.grid = grid
        self.entries = tuple(PlaceEntry(i, pid, pt) for i, (pid, pt) in enumerate(places))
        self._index = {}
        for e in self.entries:
            if e.place_id in self._index:
                raise DataError(f"duplicate place_id {e.place_id!r}")
            self._index[e.place_id] = e.token_id
        self.pad_id = len(self.entries)
        self.mask_id = len(self.entries) + 1
        if grid is not None:
            self.origin = grid.origin
        else:
            self.origin = GeoPoint(
                min(e.centroid.lat for e in self.entries),
                min(e.centroid.lon for e in self.entries),
            )

    @property
    def n_places(self) -> int:
        return len(self.entries)

    @property
    def size(self) -> int:
        return len(self.entries) + 2

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other):
        if not isinstance(other, LocationVocab):
            return NotImplemented
        return (self.modality, self.grid, self.entries) == (other.modality, other.grid, other.entries)

    def token_of(self, place_id: str) -> int:
        try:
            return self._index[place_id]
        except KeyError:
            raise DataError(f"unknown place_id {place_id!r}") from None

    def place_of(self, token_id: int) -> str:
        if not 0 <= token_id < self.n_places:
            raise DataError(f"token {token_id} is not a place token")
        return self.entries[token_id].place_id

    def centroid(self, token_id: int) -> GeoPoint:
        if not 0 <= token_id < self.n_places:
            raise DataError(f"token {token_id} is not a place token")
        return self.entries[token_id].centroid

    def is_special(self, token_id: int) -> bool:
        return token_id in (self.pad_id, self.mask_id)

    def xy(self) -> list[tuple[float, float]]:
        """Projected metres of every place centroid, in token order."""
        return [project(e.centroid, self.origin) for e in self.entries]

    def to_json(self) -> dict:
        out = {
            "modality": self.modality.value,
            "vocab": [{"place_id": e.place_id, "lat": e.centroid.lat, "lon": e.centroid.lon} for e in self.entries],
        }
        if self.grid is not None:
            g = self.grid
            out["grid"] = {
                "origin": {"lat": g.origin.lat, "lon": g.origin.lon},
                "cell_size_m": g.cell_size_m,
                "rows": g.n_rows,
                "cols": g.n_cols,
            }
        return out

    @classmethod
    def from_json(cls, modality: str, vocab: list, grid: dict | None = None) -> "LocationVocab":
        places = []
        for item in vocab:
            _check_keys(item, {"place_id", "lat", "lon"}, "vocab entry")
            places.append((str(item["place_id"]), GeoPoint(float(item["lat"]), float(item["lon"]))))
        spec = None
        if grid is not None:
            _check_keys(grid, {"origin", "cell_size_m", "rows", "cols"}, "grid")
            spec = GridSpec(
                GeoPoint(float(grid["origin"]["lat"]), float(grid["origin"]["lon"])),
                float(grid["cell_size_m"]),
                int(grid["rows"]),
                int(grid["cols"]),
            )
        return cls(places, Modality(modality), spec)


def build_grid_vocab(bbox: tuple[GeoPoint, GeoPoint], cell_size_m: float = 100.0) -> LocationVocab:
    """Tile the (south-west, north-east) box with square cells, row-major from the SW corner."""
    sw, ne = bbox
    if cell_size_m <= 0:
        raise DataError(f"cell size must be positive, got {cell_size_m}")
    width, height = project(GeoPoint(sw.lat, ne.lon), sw)[0], project(GeoPoint(ne.lat, sw.lon), sw)[1]
    if width <= 0 or height <= 0:
        raise DataError(
            f"degenerate bounding box {sw} -> {ne}: need north-east strictly above and right of south-west"
        )
    # Tolerance keeps an exact 1000 m span from rounding up to 11 cells.
    n_rows = max(1, math.ceil(height / cell_size_m - 1e-9))
    n_cols = max(1, math.ceil(width / cell_size_m - 1e-9))
    grid = GridSpec(sw, float(cell_size_m), n_rows, n_cols)
    places = [
        (grid_place_id(r, c), grid.centroid(r, c))
        for r in range(n_rows)
        for c in range(n_cols)
    ]
    return LocationVocab(places, Modality.GPS, grid)


def build_tower_vocab(towers: Iterable[tuple[str, GeoPoint]]) -> LocationVocab:
    return LocationVocab(list(towers), Modality.CDR)


# ---------------------------------------------------------------------------
# Visits, trajectories, profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Visit:
    token_id: int
    timestamp: int  # seconds since local midnight
    slot_index: int | None = None
    observed: bool = True
    alternatives: tuple[int, ...] = ()  # ranked runner-up tokens for reconstructed visits

    def __post_init__(self):
        if not isinstance(self.timestamp, int) or not 0 <= self.timestamp < SECONDS_PER_DAY:
            raise DataError(f"visit timestamp {self.timestamp!r} outside [0, 86400)")
        if self.slot_index is not None and self.slot_index != slot_of(self.timestamp):
            raise DataError(f"slot {self.slot_index} does not contain timestamp {self.timestamp}")


@dataclass(frozen=True)
class Trajectory:
    user_id: str
    date: dt.date
    visits: tuple[Visit, ...]
    profile_ref: str = ""

    def __post_init__(self):
        if not self.profile_ref:
            object.__setattr__(self, "profile_ref", self.user_id)
        object.__setattr__(self, "visits", tuple(self.visits))
        if not self.visits:
            raise DataError(f"trajectory {self.user_id}/{self.date} has no visits")
        for a, b in zip(self.visits, self.visits[1:]):
            if b.timestamp < a.timestamp:
                raise DataError(
                    f"trajectory {self.user_id}/{self.date}: visit at {b.timestamp}s precedes {a.timestamp}s"
                )

    @property
    def key(self) -> tuple[str, str]:
        return self.user_id, self.date.isoformat()


def age_bucket_of(age: float, edges: Sequence[int] = DEFAULT_AGE_EDGES,
                  labels: Sequence[str] = DEFAULT_AGE_BUCKETS) -> str:
    if len(labels) != len(edges) + 1:
        raise ValueError("need one more label than bucket edges")
    for edge, label in zip(edges, labels):
        if age < edge:
            return label
    return labels[-1]


@dataclass(frozen=True)
class ContextProfile:
    age_bucket: str
    gender: str
    primary_anchor: int
    secondary_anchor: int


@dataclass(frozen=True)
class HolidayCalendar:
    holidays: frozenset[dt.date] = frozenset()

    def day_type(self, date: dt.date) -> DayType:
        if date in self.holidays:
            return DayType.HOLIDAY
        return DayType.WEEKEND if date.weekday() >= 5 else DayType.WEEKDAY


@dataclass
class Dataset:
    vocab: LocationVocab
    trajectories: list[Trajectory]
    profiles: dict[str, ContextProfile]
    calendar: HolidayCalendar = field(default_factory=HolidayCalendar)
    age_buckets: tuple[str, ...] = DEFAULT_AGE_BUCKETS
    genders: tuple[str, ...] = DEFAULT_GENDERS

    @property
    def modality(self) -> Modality:
        return self.vocab.modality

    def __len__(self) -> int:
        return len(self.trajectories)

    def validate(self, max_visits: int | None = None) -> None:
        for e in self.vocab.entries:
            e.centroid.check()
        for uid, p in self.profiles.items():
            self.check_profile(uid, p)
        for t in self.trajectories:
            self.check_trajectory(t, max_visits)

    def check_profile(self, uid: str, p: ContextProfile) -> None:
        if p.age_bucket not in self.age_buckets:
            raise DataError(f"profile {uid}: unknown age bucket {p.age_bucket!r}")
        if p.gender not in self.genders:
            raise DataError(f"profile {uid}: unknown gender {p.gender!r}")
        for name, tok in (("primary", p.primary_anchor), ("secondary", p.secondary_anchor)):
            if not 0 <= tok < self.vocab.n_places:
                raise DataError(f"profile {uid}: {name} anchor {tok} is not a place token")

    def check_trajectory(self, t: Trajectory, max_visits: int | None = None) -> None:
        if t.profile_ref not in self.profiles:
            raise DataError(f"trajectory {t.user_id}/{t.date}: no profile {t.profile_ref!r}")
        if max_visits is not None and len(t.visits) > max_visits:
            raise DataError(f"trajectory {t.user_id}/{t.date}: {len(t.visits)} visits exceeds {max_visits}")
        for v in t.visits:
            if not 0 <= v.token_id < self.vocab.n_places:
                raise DataError(f"trajectory {t.user_id}/{t.date}: token {v.token_id} is not a place")
            if self.modality is Modality.CDR and v.slot_index != slot_of(v.timestamp):
                raise DataError(f"trajectory {t.user_id}/{t.date}: slot index missing or wrong")

    def profile_for(self, t: Trajectory) -> ContextProfile:
        return self.profiles[t.profile_ref]

    def users(self) -> list[str]:
        return sorted(self.profiles)

    def subset(self, users: Iterable[str]) -> "Dataset":
        keep = set(users)
        return Dataset(
            self.vocab,
            [t for t in self.trajectories if t.user_id in keep],
            {u: p for u, p in self.profiles.items() if u in keep},
            self.calendar,
            self.age_buckets,
            self.genders,
        )

    def with_trajectories(self, trajectories: list[Trajectory]) -> "Dataset":
        return Dataset(self.vocab, trajectories, self.profiles, self.calendar, self.age_buckets, self.genders)


def make_visit(token_id: int, timestamp: int, modality: Modality, observed: bool = True,
               alternatives: tuple[int, ...] = ()) -> Visit:
    slot = slot_of(timestamp) if Modality(modality) is Modality.CDR else None
    return Visit(token_id, timestamp, slot, observed, alternatives)


def sort_visits(visits: Iterable[Visit]) -> tuple[Visit, ...]:
    """Canonical order: timestamp, then token id for ties."""
    return tuple(sorted(visits, key=lambda v: (v.timestamp, v.token_id)))


# ---------------------------------------------------------------------------
# JSON-lines I/O
# ---------------------------------------------------------------------------

_HEADER_KEYS = {"modality", "vocab", "holidays", "profiles"}
_HEADER_OPTIONAL = {"grid", "age_buckets", "genders"}
_TRAJ_KEYS = {"user_id", "date", "visits"}
_VISIT_KEYS = {"place_id", "timestamp", "observed"}
_VISIT_OPTIONAL = {"alternatives"}
_PROFILE_KEYS = {"age_bucket", "gender", "primary_anchor", "secondary_anchor"}


def _check_keys(obj, required: set, what: str, optional: set = frozenset()) -> None:
    if not isinstance(obj, dict):
        raise DataError(f"{what} must be an object")
    missing = required - obj.keys()
    if missing:
        raise DataError(f"{what} missing fields {sorted(missing)}")
    unknown = obj.keys() - required - optional
    if unknown:
        raise DataError(f"{what} has unknown fields {sorted(unknown)}")


def header_json(ds: Dataset) -> dict:
    vocab = ds.vocab.to_json()
    header = {
        "modality": vocab["modality"],
        "vocab": vocab["vocab"],
        "holidays": sorted(d.isoformat() for d in ds.calendar.holidays),
        "profiles": {
            uid: {
                "age_bucket": p.age_bucket,
                "gender": p.gender,
                "primary_anchor": ds.vocab.place_of(p.primary_anchor),
                "secondary_anchor": ds.vocab.place_of(p.secondary_anchor),
            }
            for uid, p in sorted(ds.profiles.items())
        },
        "age_buckets": list(ds.age_buckets),
        "genders": list(ds.genders),
    }
    if "grid" in vocab:
        header["grid"] = vocab["grid"]
    return header


def trajectory_json(t: Trajectory, vocab: LocationVocab) -> dict:
    visits = []
    for v in t.visits:
        item = {"place_id": vocab.place_of(v.token_id), "timestamp": v.timestamp, "observed": v.observed}
        if v.alternatives:
            item["alternatives"] = [vocab.place_of(a) for a in v.alternatives]
        visits.append(item)
    return {"user_id": t.user_id, "date": t.date.isoformat(), "visits": visits}


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write ``ds`` as JSON lines: one header object, then one trajectory per line."""
    ds.validate()
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(_dumps(header_json(ds)) + "\n")
        for t in ds.trajectories:
            fh.write(_dumps(trajectory_json(t, ds.vocab)) + "\n")


def parse_header(obj) -> Dataset:
    _check_keys(obj, _HEADER_KEYS, "header", _HEADER_OPTIONAL)
    vocab = LocationVocab.from_json(obj["modality"], obj["vocab"], obj.get("grid"))
    ds = Dataset(
        vocab,
        [],
        {},
        HolidayCalendar(frozenset(dt.date.fromisoformat(d) for d in obj["holidays"])),
        tuple(obj.get("age_buckets", DEFAULT_AGE_BUCKETS)),
        tuple(obj.get("genders", DEFAULT_GENDERS)),
    )
    for uid, p in obj["profiles"].items():
        _check_keys(p, _PROFILE_KEYS, f"profile {uid}")
        prof = ContextProfile(
            str(p["age_bucket"]),
            str(p["gender"]),
            vocab.token_of(p["primary_anchor"]),
            vocab.token_of(p["secondary_anchor"]),
        )
        ds.check_profile(uid, prof)
        ds.profiles[str(uid)] = prof
    return ds


def parse_trajectory(obj, ds: Dataset, max_visits: int | None = None) -> Trajectory:
    _check_keys(obj, _TRAJ_KEYS, "trajectory")
    if not isinstance(obj["visits"], list):
        raise DataError("trajectory visits must be a list")
    visits = []
    for v in obj["visits"]:
        _check_keys(v, _VISIT_KEYS, "visit", _VISIT_OPTIONAL)
        ts = v["timestamp"]
        if not isinstance(ts, int) or isinstance(ts, bool):
            raise DataError(f"visit timestamp must be an integer, got {ts!r}")
        if not isinstance(v["observed"], bool):
            raise DataError("visit 'observed' must be a boolean")
        alts = tuple(ds.vocab.token_of(a) for a in v.get("alternatives", ()))
        visits.append(make_visit(ds.vocab.token_of(v["place_id"]), ts, ds.modality, v["observed"], alts))
    t = Trajectory(str(obj["user_id"]), dt.date.fromisoformat(obj["date"]), tuple(visits))
    ds.check_trajectory(t, max_visits)
    return t


def load_dataset(path: str | Path, max_visits: int | None = None) -> Dataset:
    """Read a dataset file; any violation raises DataError naming the line."""
    path = Path(path)
    ds = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if ds is None:
                    ds = parse_header(obj)
                else:
                    ds.trajectories.append(parse_trajectory(obj, ds, max_visits))
            except (json.JSONDecodeError, DataError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    if ds is None:
        return empty_dataset()
    return ds


class _EmptyVocab(LocationVocab):
    def __init__(self):
        self.modality = Modality.CDR
        self.grid = None
        self.entries = ()
        self._index = {}
        self.pad_id, self.mask_id = 0, 1
        self.origin = GeoPoint(0.0, 0.0)


def empty_dataset() -> Dataset:
    """Dataset read from an empty file: no places, no profiles, no trajectories."""
    return Dataset(_EmptyVocab(), [], {})

"""Damage records, segmentation-outline geometry, and the per-location ledger.

A record carries one inspection's measurements (length, perimeter, area, date)
for a labelled damage instance; the ledger keeps an append-only history of
records keyed by location id and label so damage can be tracked over time.
"""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

# Closed outlines may deviate from their best-fit plane by at most this much
# (meters); larger deviations are rejected rather than silently projected.
PLANARITY_TOL_M = 0.02

CRACK_LABELS = frozenset({"crack", "cracking"})
SPALLING_LABELS = frozenset({"spall", "spalling"})


class OutlineError(ValueError):
    """Segmentation outline unusable for the requested measurement."""


class RecordParseError(ValueError):
    """A serialized damage record with a missing or invalid field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"field {field!r}: {message}")
        self.field = field


class DuplicateRecordError(ValueError):
    """Record id already present in the ledger."""


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise OutlineError(f"points must be an (n, 3) array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise OutlineError("points must be finite")
    return pts


def _newell_normal(pts: np.ndarray) -> np.ndarray:
    """Sum of cross products of consecutive vertices (twice the area vector)."""
    rolled = np.roll(pts, -1, axis=0)
    return np.cross(pts, rolled).sum(axis=0)


@dataclass(frozen=True)
class SegmentationOutline:
    """Ordered world-frame points placed around a damage instance.

    Open outlines trace a crack (>= 2 points); closed outlines bound a
    spalling region (>= 3 non-collinear points).
    """

    points: np.ndarray
    closed: bool

    def __post_init__(self):
        pts = _as_points(self.points)
        if self.closed:
            if len(pts) < 3:
                raise OutlineError(f"closed outline needs >= 3 points, got {len(pts)}")
            extent = float(np.max(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))
            if np.linalg.norm(_newell_normal(pts)) <= 1e-12 * max(1.0, extent**2):
                raise OutlineError("closed outline points are collinear")
        elif len(pts) < 2:
            raise OutlineError(f"open outline needs >= 2 points, got {len(pts)}")
        object.__setattr__(self, "points", pts)


def polyline_length(outline: SegmentationOutline) -> float:
    """Total length of an open outline's consecutive segments, in meters."""
    if outline.closed:
        raise OutlineError("polyline length is defined for open outlines")
    diffs = np.diff(outline.points, axis=0)
    return float(np.linalg.norm(diffs, axis=1).sum())


def polygon_perimeter(outline: SegmentationOutline) -> float:
    """Perimeter of a closed outline including the closing edge, in meters."""
    if not outline.closed:
        raise OutlineError("perimeter requires a closed outline")
    edges = np.roll(outline.points, -1, axis=0) - outline.points
    return float(np.linalg.norm(edges, axis=1).sum())


def _plane_deviation(pts: np.ndarray) -> float:
    """Max point distance from the least-squares plane through the points."""
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    normal = vt[-1]
    return float(np.max(np.abs(centered @ normal)))


def polygon_area(outline: SegmentationOutline) -> float:
    """Planar area of a closed outline: half the Newell normal's norm, in m^2.

    Orientation-independent. Raises OutlineError when the points deviate from
    their best-fit plane by more than PLANARITY_TOL_M.
    """
    if not outline.closed:
        raise OutlineError("area requires a closed outline")
    deviation = _plane_deviation(outline.points)
    if deviation > PLANARITY_TOL_M:
        raise OutlineError(
            f"outline is not planar: max deviation {deviation:.4f} m exceeds {PLANARITY_TOL_M} m"
        )
    return float(np.linalg.norm(_newell_normal(outline.points)) / 2.0)


def max_pairwise_distance(points) -> float:
    pts = _as_points(points)
    return max(float(np.linalg.norm(a - b)) for a, b in combinations(pts, 2))


def format_date(date: dt.date) -> str:
    return f"{date.day:02d}/{date.month:02d}/{date.year % 100:02d}"


def parse_date(text: str) -> dt.date:
    """Parse dd/mm/yy with the two-digit year read as 2000-2099."""
    parts = str(text).split("/")
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise ValueError(f"date must be dd/mm/yy, got {text!r}")
    day, month, year = (int(p) for p in parts)
    return dt.date(2000 + year, month, day)


@dataclass(frozen=True)
class DamageRecord:
    """One time-stamped measurement entry for a damage instance."""

    id: int
    damage_label: str
    length: float
    perimeter: float
    area: float
    date: dt.date

    def __post_init__(self):
        if self.length < 0 or self.perimeter < 0 or self.area < 0:
            raise ValueError("length, perimeter, and area must be >= 0")
        if not isinstance(self.date, dt.date):
            raise ValueError("date must be a datetime.date")


def make_record(record_id: int, label: str, outline: SegmentationOutline, on_date: dt.date | None = None) -> DamageRecord:
    """Measure an outline and build the record for it.

    Cracks (open outline): length is the polyline length; area and perimeter
    are zero. Spalling (closed outline): area and perimeter come from the
    polygon, length is the longest point-pair distance.
    """
    normalized = label.strip().lower()
    if normalized in CRACK_LABELS and outline.closed:
        raise OutlineError(f"label {label!r} expects an open outline")
    if normalized in SPALLING_LABELS and not outline.closed:
        raise OutlineError(f"label {label!r} expects a closed outline")
    date = on_date or dt.date.today()
    if outline.closed:
        return DamageRecord(
            id=record_id,
            damage_label=label,
            length=max_pairwise_distance(outline.points),
            perimeter=polygon_perimeter(outline),
            area=polygon_area(outline),
            date=date,
        )
    return DamageRecord(
        id=record_id,
        damage_label=label,
        length=polyline_length(outline),
        perimeter=0.0,
        area=0.0,
        date=date,
    )


def record_to_dict(record: DamageRecord) -> dict:
    return {
        "id": record.id,
        "damage_label": record.damage_label,
        "length": record.length,
        "perimeter": record.perimeter,
        "area": record.area,
        "date": format_date(record.date),
    }


def record_from_dict(data: dict) -> DamageRecord:
    if not isinstance(data, dict):
        raise RecordParseError("record", "expected an object")
    def pull(field, kind):
        if field not in data:
            raise RecordParseError(field, "missing")
        value = data[field]
        if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if kind is int and isinstance(value, int) and not isinstance(value, bool):
            return value
        if kind is str and isinstance(value, str):
            return value
        raise RecordParseError(field, f"expected {kind.__name__}, got {type(value).__name__}")

    record_id = pull("id", int)
    label = pull("damage_label", str)
    length = pull("length", float)
    perimeter = pull("perimeter", float)
    area = pull("area", float)
    raw_date = pull("date", str)
    try:
        date = parse_date(raw_date)
    except ValueError as exc:
        raise RecordParseError("date", str(exc)) from exc
    try:
        return DamageRecord(record_id, label, length, perimeter, area, date)
    except ValueError as exc:
        raise RecordParseError("record", str(exc)) from exc


def serialize_record(record: DamageRecord) -> str:
    return json.dumps(record_to_dict(record))


def parse_record(text: str) -> DamageRecord:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RecordParseError("record", f"invalid JSON: {exc.msg}") from exc
    return record_from_dict(data)


@dataclass(frozen=True)
class LedgerEntry:
    location_id: int
    record: DamageRecord
    timestamp_ms: int


class DamageLedger:
    """Append-only store of ledger entries; history queries sort by timestamp."""

    def __init__(self):
        self._entries: list[LedgerEntry] = []
        self._by_record_id: dict[int, LedgerEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    def append_record(self, location_id: int, record: DamageRecord, timestamp_ms: int) -> "DamageLedger":
        if record.id in self._by_record_id:
            raise DuplicateRecordError(f"record id {record.id} already in ledger")
        entry = LedgerEntry(int(location_id), record, int(timestamp_ms))
        self._entries.append(entry)
        self._by_record_id[record.id] = entry
        return self

    def history(self, location_id: int, label: str) -> list[DamageRecord]:
        """Records for one location and label, ascending by timestamp."""
        matching = [
            e for e in self._entries
            if e.location_id == location_id and e.record.damage_label == label
        ]
        matching.sort(key=lambda e: (e.timestamp_ms, e.record.id))
        return [e.record for e in matching]

    def history_entries(self, location_id: int, label: str) -> list[LedgerEntry]:
        matching = [
            e for e in self._entries
            if e.location_id == location_id and e.record.damage_label == label
        ]
        matching.sort(key=lambda e: (e.timestamp_ms, e.record.id))
        return matching

    def to_dicts(self) -> list[dict]:
        """Entries in canonical (record id) order, each with its envelope fields."""
        out = []
        for entry in sorted(self._entries, key=lambda e: e.record.id):
            doc = {"location_id": entry.location_id, "timestamp_ms": entry.timestamp_ms}
            doc.update(record_to_dict(entry.record))
            out.append(doc)
        return out

    @classmethod
    def from_dicts(cls, docs) -> "DamageLedger":
        ledger = cls()
        for doc in docs:
            record = record_from_dict({k: v for k, v in doc.items() if k not in ("location_id", "timestamp_ms")})
            ledger.append_record(doc["location_id"], record, doc["timestamp_ms"])
        return ledger

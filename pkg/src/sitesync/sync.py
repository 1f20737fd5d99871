"""Session state machine: marker annotation, model moves, and LWW merge.

Markers are children of the model node: they are stored in model-local
coordinates, so moving the model never changes them and their world positions
follow the model transform. Concurrent writes to the same field unit resolve
last-write-wins on the (timestamp_ms, client_id, event_id) stamp — most recent
write kept, ties broken toward the lexicographically greater client — and the
superseded version is logged for review.

World-frame positions in incoming events are resolved to model-local
coordinates once, at intake (see resolve_event); replicated events always
carry local coordinates so replicas converge regardless of delivery order.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .damage import DamageLedger, record_from_dict
from .geometry import Transform, to_model_coordinates, to_world_coordinates

ADD_MARKER = "add_marker"
EDIT_MARKER = "edit_marker"
MOVE_MODEL = "move_model"
APPEND_RECORD = "append_record"
END_SESSION = "end_session"

EVENT_KINDS = frozenset({ADD_MARKER, EDIT_MARKER, MOVE_MODEL, APPEND_RECORD, END_SESSION})

# LWW ordering key; greater wins.
Stamp = tuple[int, str, str]


class SyncError(ValueError):
    """Malformed or inapplicable session event."""


class SessionSealedError(SyncError):
    """Event submitted after the session ended."""


class DuplicateMarkerError(SyncError):
    pass


class UnknownMarkerError(SyncError):
    pass


class DuplicateLedgerIdError(SyncError):
    pass


@dataclass(frozen=True)
class SessionEvent:
    """Time-stamped, client-attributed write operation."""

    event_id: str
    kind: str
    client_id: str
    timestamp_ms: int
    payload: dict

    def __post_init__(self):
        if not self.event_id:
            raise SyncError("event_id must be non-empty")
        if self.kind not in EVENT_KINDS:
            raise SyncError(f"unknown event kind {self.kind!r}")
        if not isinstance(self.timestamp_ms, int) or self.timestamp_ms <= 0:
            raise SyncError(f"timestamp_ms must be a positive integer, got {self.timestamp_ms!r}")
        if not isinstance(self.payload, dict):
            raise SyncError("payload must be a dict")

    @property
    def stamp(self) -> Stamp:
        return (self.timestamp_ms, self.client_id, self.event_id)

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "kind": self.kind,
            "client_id": self.client_id,
            "timestamp_ms": self.timestamp_ms,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SessionEvent":
        try:
            return cls(
                event_id=data["event_id"],
                kind=data["kind"],
                client_id=data["client_id"],
                timestamp_ms=data["timestamp_ms"],
                payload=data.get("payload", {}),
            )
        except KeyError as exc:
            raise SyncError(f"event missing field {exc.args[0]!r}") from exc


@dataclass(frozen=True)
class ConflictEntry:
    """A write superseded by last-write-wins, kept for review."""

    target: tuple
    losing_event: SessionEvent
    superseded_value: object
    winning_timestamp_ms: int
    winning_client_id: str

    def to_dict(self) -> dict:
        return {
            "target": list(self.target),
            "losing_event": self.losing_event.to_dict(),
            "superseded_value": self.superseded_value,
            "winning_timestamp_ms": self.winning_timestamp_ms,
            "winning_client_id": self.winning_client_id,
        }


@dataclass(frozen=True)
class LocationMarker:
    """Read view of a damage indicator, positioned in the model frame."""

    marker_id: int
    local_position: np.ndarray
    label: str
    details: str
    created_ms: int
    modified_ms: int
    author: str


@dataclass
class ApplyResult:
    applied: bool
    version: int | None = None
    conflict: ConflictEntry | None = None
    resolved: SessionEvent | None = None
    reason: str | None = None


class _Register:
    """One LWW cell: current winner plus every write that lost to it."""

    __slots__ = ("value", "stamp", "event", "losers")

    def __init__(self, value=None):
        self.value = value
        self.stamp: Stamp | None = None
        self.event: SessionEvent | None = None
        self.losers: list[tuple[int, SessionEvent, object]] = []

    def write(self, value, event: SessionEvent, seq: int) -> ConflictEntry | None:
        stamp = event.stamp
        if self.stamp is None:
            self.value, self.stamp, self.event = value, stamp, event
            return None
        if stamp > self.stamp:
            loser, superseded = self.event, self.value
            self.losers.append((seq, loser, superseded))
            self.value, self.stamp, self.event = value, stamp, event
            return None if loser is None else self._entry(loser, superseded)
        self.losers.append((seq, event, value))
        return self._entry(event, value)

    def _entry(self, losing_event, superseded_value) -> ConflictEntry:
        return ConflictEntry(
            target=(),  # caller re-targets via materialize
            losing_event=losing_event,
            superseded_value=superseded_value,
            winning_timestamp_ms=self.stamp[0],
            winning_client_id=self.stamp[1],
        )


class _MarkerState:
    __slots__ = ("marker_id", "meta", "position", "created_stamp")

    def __init__(self, marker_id: int):
        self.marker_id = marker_id
        self.meta = _Register()
        self.position = _Register()
        self.created_stamp: Stamp | None = None

    def note_event(self, event: SessionEvent):
        if self.created_stamp is None or event.stamp < self.created_stamp:
            self.created_stamp = event.stamp

    def view(self) -> LocationMarker:
        meta = self.meta.value or {}
        stamps = [r.stamp for r in (self.meta, self.position) if r.stamp is not None]
        modified = max(s[0] for s in stamps) if stamps else self.created_stamp[0]
        return LocationMarker(
            marker_id=self.marker_id,
            local_position=np.asarray(self.position.value or (0.0, 0.0, 0.0), dtype=float),
            label=meta.get("label") or "",
            details=meta.get("details") or "",
            created_ms=self.created_stamp[0],
            modified_ms=modified,
            author=self.created_stamp[1],
        )


def _retarget(conflict: ConflictEntry | None, target: tuple) -> ConflictEntry | None:
    if conflict is None:
        return None
    return ConflictEntry(
        target=target,
        losing_event=conflict.losing_event,
        superseded_value=conflict.superseded_value,
        winning_timestamp_ms=conflict.winning_timestamp_ms,
        winning_client_id=conflict.winning_client_id,
    )


class SessionState:
    """Mutable per-model session: transform, markers, ledger, version counter.

    One writer at a time; readers see the latest applied version. Apply every
    event exactly once (duplicates by event_id are dropped).
    """

    def __init__(self, model_id: str = ""):
        self.model_id = model_id
        self._transform = _Register(value=Transform.identity().to_dict())
        self._markers: dict[int, _MarkerState] = {}
        self._records: dict[int, _Register] = {}
        self.version = 0
        self.sealed = False
        self._applied_ids: set[str] = set()
        self._conflict_seq = 0

    # -- read API -----------------------------------------------------------

    @property
    def model_transform(self) -> Transform:
        return Transform.from_dict(self._transform.value)

    def marker(self, marker_id: int) -> LocationMarker:
        state = self._markers.get(marker_id)
        if state is None:
            raise UnknownMarkerError(f"unknown marker {marker_id}")
        return state.view()

    def markers(self) -> dict[int, LocationMarker]:
        return {mid: s.view() for mid, s in sorted(self._markers.items())}

    def marker_ids(self) -> list[int]:
        return sorted(self._markers)

    def world_position_of(self, marker_id: int) -> np.ndarray:
        """Current world position: local position pushed through the model transform."""
        return to_world_coordinates(self.marker(marker_id).local_position, self.model_transform)

    def ledger(self) -> DamageLedger:
        ledger = DamageLedger()
        for entry in sorted(self._records.values(), key=lambda r: r.value["record"]["id"]):
            ledger.append_record(
                entry.value["location_id"],
                record_from_dict(entry.value["record"]),
                entry.value["timestamp_ms"],
            )
        return ledger

    def conflict_log(self) -> list[ConflictEntry]:
        """All superseded writes, each resolved against its unit's current winner."""
        out = []
        for target, register in self._iter_registers():
            for seq, event, value in register.losers:
                out.append((seq, _retarget(register._entry(event, value), target)))
        out.sort(key=lambda pair: pair[0])
        return [entry for _, entry in out]

    def _iter_registers(self):
        yield ("model_transform",), self._transform
        for mid, marker in self._markers.items():
            yield ("marker_meta", mid), marker.meta
            yield ("marker_position", mid), marker.position
        for rid, register in self._records.items():
            yield ("record", rid), register

    # -- intake resolution ----------------------------------------------------

    def resolve_event(self, event: SessionEvent, allocate_marker_id=None) -> SessionEvent:
        """Validate an incoming event and pin down its open fields.

        Allocates the marker id for AddMarker when absent, converts
        world-frame positions to model-local coordinates against the current
        transform, and completes partial metadata writes. The result is
        self-contained and safe to replicate.
        """
        if event.event_id in self._applied_ids:
            return event
        if self.sealed:
            raise SessionSealedError(f"session {self.model_id} has ended")
        payload = dict(event.payload)

        if event.kind == ADD_MARKER:
            marker_id = payload.get("marker_id")
            if marker_id is None:
                if allocate_marker_id is None:
                    raise SyncError("add_marker payload needs a marker_id")
                marker_id = allocate_marker_id()
            marker_id = int(marker_id)
            if marker_id in self._markers:
                raise DuplicateMarkerError(f"marker {marker_id} already exists")
            payload["marker_id"] = marker_id
            payload["local_position"] = self._resolve_position(payload)
            payload.setdefault("label", "")
            payload.setdefault("details", "")
        elif event.kind == EDIT_MARKER:
            marker_id = payload.get("marker_id")
            marker_id = None if marker_id is None else int(marker_id)
            if marker_id is None or marker_id not in self._markers:
                raise UnknownMarkerError(f"unknown marker {marker_id}")
            payload["marker_id"] = marker_id
            touches_position = "local_position" in payload or "world_position" in payload
            touches_meta = "label" in payload or "details" in payload
            if not touches_position and not touches_meta:
                raise SyncError("edit_marker changes nothing")
            if touches_position:
                payload["local_position"] = self._resolve_position(payload)
            if touches_meta:
                current = self._markers[marker_id].view()
                payload.setdefault("label", current.label)
                payload.setdefault("details", current.details)
        elif event.kind == MOVE_MODEL:
            try:
                Transform.from_dict(payload["transform"])
            except (KeyError, TypeError, ValueError) as exc:
                raise SyncError(f"move_model payload invalid: {exc}") from exc
        elif event.kind == APPEND_RECORD:
            if "location_id" not in payload:
                raise SyncError("append_record payload needs location_id")
            record = record_from_dict(payload.get("record"))
            if record.id in self._records:
                raise DuplicateLedgerIdError(f"record id {record.id} already in ledger")
        return SessionEvent(event.event_id, event.kind, event.client_id, event.timestamp_ms, payload)

    def _resolve_position(self, payload: dict) -> list[float]:
        if "local_position" in payload:
            local = np.asarray(payload["local_position"], dtype=float)
        elif "world_position" in payload:
            local = to_model_coordinates(payload["world_position"], self.model_transform)
        else:
            raise SyncError("marker event needs world_position or local_position")
        if local.shape != (3,) or not np.all(np.isfinite(local)):
            raise SyncError("marker position must be a finite 3-vector")
        return [float(v) for v in local]

    # -- application ----------------------------------------------------------

    def apply_event(self, event: SessionEvent, strict: bool = True) -> ApplyResult:
        """Apply one event; returns the new version and any superseded write.

        strict mode (server intake) raises on invalid targets and on writes to
        a sealed session. Non-strict mode (replica merge) is total: inapplicable
        events are dropped, concurrent writes resolve LWW, and out-of-order
        edits create the marker shell they target.
        """
        if event.event_id in self._applied_ids:
            return ApplyResult(applied=False, reason="duplicate")
        if self.sealed:
            if strict:
                raise SessionSealedError(f"session {self.model_id} has ended")
            return ApplyResult(applied=False, reason="sealed")
        if strict:
            event = self.resolve_event(event)

        try:
            conflict: ConflictEntry | None = None
            if event.kind == ADD_MARKER:
                conflict = self._apply_marker_write(event, require_existing=False)
            elif event.kind == EDIT_MARKER:
                conflict = self._apply_marker_write(event, require_existing=strict)
            elif event.kind == MOVE_MODEL:
                value = Transform.from_dict(event.payload["transform"]).to_dict()
                raw = self._transform.write(value, event, self._next_seq())
                conflict = _retarget(raw, ("model_transform",))
            elif event.kind == APPEND_RECORD:
                conflict = self._apply_record(event, strict)
            elif event.kind == END_SESSION:
                self.sealed = True
        except (SyncError, ValueError, KeyError, TypeError):
            if strict:
                raise
            return ApplyResult(applied=False, reason="invalid")

        self._applied_ids.add(event.event_id)
        self.version += 1
        return ApplyResult(applied=True, version=self.version, conflict=conflict, resolved=event)

    def merge(self, event: SessionEvent) -> ApplyResult:
        """Total merge of a replicated (already resolved) event."""
        return self.apply_event(event, strict=False)

    def _next_seq(self) -> int:
        self._conflict_seq += 1
        return self._conflict_seq

    def _apply_marker_write(self, event: SessionEvent, require_existing: bool) -> ConflictEntry | None:
        payload = event.payload
        if payload.get("marker_id") is None:
            raise SyncError("marker event missing marker_id")
        marker_id = int(payload["marker_id"])
        state = self._markers.get(marker_id)
        if state is None:
            if require_existing:
                raise UnknownMarkerError(f"unknown marker {marker_id}")
            state = self._markers[marker_id] = _MarkerState(int(marker_id))
        state.note_event(event)

        conflicts = []
        if "local_position" in payload:
            raw = state.position.write(list(payload["local_position"]), event, self._next_seq())
            conflicts.append(_retarget(raw, ("marker_position", marker_id)))
        if "label" in payload or "details" in payload or event.kind == ADD_MARKER:
            value = {"label": payload.get("label"), "details": payload.get("details")}
            raw = state.meta.write(value, event, self._next_seq())
            conflicts.append(_retarget(raw, ("marker_meta", marker_id)))
        conflicts = [c for c in conflicts if c is not None]
        return conflicts[0] if conflicts else None

    def _apply_record(self, event: SessionEvent, strict: bool) -> ConflictEntry | None:
        payload = event.payload
        record = record_from_dict(payload.get("record"))
        value = {
            "location_id": int(payload["location_id"]),
            "timestamp_ms": event.timestamp_ms,
            "record": dict(payload["record"]),
        }
        register = self._records.get(record.id)
        if register is None:
            register = self._records[record.id] = _Register()
        elif strict:
            raise DuplicateLedgerIdError(f"record id {record.id} already in ledger")
        raw = register.write(value, event, self._next_seq())
        return _retarget(raw, ("record", record.id))

    # -- persistence ----------------------------------------------------------

    def snapshot(self) -> dict:
        """Full persisted form; restore() rebuilds an equal state from it."""
        markers = []
        for mid in sorted(self._markers):
            state = self._markers[mid]
            view = state.view()
            markers.append(
                {
                    "marker_id": mid,
                    "local_position": list(view.local_position),
                    "label": view.label,
                    "details": view.details,
                    "created_ms": view.created_ms,
                    "modified_ms": view.modified_ms,
                    "author": view.author,
                    "created_stamp": list(state.created_stamp),
                    "meta": _register_doc(state.meta),
                    "position": _register_doc(state.position),
                }
            )
        ledger = []
        for rid in sorted(self._records):
            register = self._records[rid]
            ledger.append(
                dict(register.value, stamp=list(register.stamp), event=register.event.to_dict())
            )
        conflicts = []
        for target, register in self._iter_registers():
            for seq, event, value in register.losers:
                conflicts.append(
                    {"seq": seq, "target": list(target), "losing_event": event.to_dict(), "superseded_value": value}
                )
        conflicts.sort(key=lambda c: c["seq"])
        return {
            "model_id": self.model_id,
            "model_transform": dict(self._transform.value),
            "markers": markers,
            "ledger": ledger,
            "version": self.version,
            "sealed": self.sealed,
            "model_transform_stamp": list(self._transform.stamp) if self._transform.stamp else None,
            "model_transform_event": self._transform.event.to_dict() if self._transform.event else None,
            "conflicts": conflicts,
            "applied_event_ids": sorted(self._applied_ids),
        }

    @classmethod
    def restore(cls, doc: dict) -> "SessionState":
        try:
            state = cls(doc["model_id"])
            state._transform.value = dict(doc["model_transform"])
            if doc.get("model_transform_stamp"):
                state._transform.stamp = _stamp(doc["model_transform_stamp"])
                state._transform.event = SessionEvent.from_dict(doc["model_transform_event"])
            for m in doc["markers"]:
                marker = _MarkerState(m["marker_id"])
                marker.created_stamp = _stamp(m["created_stamp"])
                _load_register(marker.meta, m["meta"])
                _load_register(marker.position, m["position"])
                state._markers[m["marker_id"]] = marker
            for entry in doc["ledger"]:
                register = _Register()
                register.value = {
                    "location_id": entry["location_id"],
                    "timestamp_ms": entry["timestamp_ms"],
                    "record": entry["record"],
                }
                register.stamp = _stamp(entry["stamp"])
                register.event = SessionEvent.from_dict(entry["event"])
                state._records[register.value["record"]["id"]] = register
            registers = {target: register for target, register in state._iter_registers()}
            for c in doc.get("conflicts", []):
                register = registers[tuple(c["target"])]
                register.losers.append((c["seq"], SessionEvent.from_dict(c["losing_event"]), c["superseded_value"]))
                state._conflict_seq = max(state._conflict_seq, c["seq"])
            state.version = doc["version"]
            state.sealed = doc.get("sealed", False)
            state._applied_ids = set(doc.get("applied_event_ids", []))
            return state
        except (KeyError, TypeError) as exc:
            raise SyncError(f"corrupt snapshot: {exc!r}") from exc

    # -- convergence fingerprint ------------------------------------------------

    def canonical_state(self) -> dict:
        """Delivery-order-independent view of the converged state."""
        markers = {}
        for mid in sorted(self._markers):
            state = self._markers[mid]
            markers[str(mid)] = {
                "meta": _register_doc(state.meta),
                "position": _register_doc(state.position),
                "created_stamp": list(state.created_stamp),
            }
        records = {
            str(rid): dict(register.value, stamp=list(register.stamp))
            for rid, register in sorted(self._records.items())
        }
        conflicts = sorted(
            [list(e.target), e.losing_event.event_id, e.losing_event.timestamp_ms, e.winning_timestamp_ms]
            for e in self.conflict_log()
        )
        return {
            "model_id": self.model_id,
            "model_transform": {"value": self._transform.value, "stamp": list(self._transform.stamp) if self._transform.stamp else None},
            "markers": markers,
            "ledger": records,
            "version": self.version,
            "sealed": self.sealed,
            "conflicts": conflicts,
        }

    def fingerprint(self) -> str:
        return fingerprint_of(self.canonical_state())


def fingerprint_of(canonical: dict) -> str:
    return hashlib.sha256(json.dumps(canonical, sort_keys=True).encode()).hexdigest()


def _register_doc(register: _Register) -> dict:
    return {
        "value": register.value,
        "stamp": list(register.stamp) if register.stamp else None,
        "event": register.event.to_dict() if register.event else None,
    }


def _load_register(register: _Register, doc: dict):
    register.value = doc["value"]
    if doc.get("stamp"):
        register.stamp = _stamp(doc["stamp"])
        register.event = SessionEvent.from_dict(doc["event"])


def _stamp(raw) -> Stamp:
    ts, client, event_id = raw
    return (int(ts), str(client), str(event_id))


def snapshot(state: SessionState) -> dict:
    return state.snapshot()


def restore(doc: dict) -> SessionState:
    return SessionState.restore(doc)

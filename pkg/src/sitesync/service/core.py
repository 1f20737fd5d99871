"""The session server: QR-token model registry, blob serving, event intake with
durable ack, and ordered broadcast to every joined client.

Events for one model session are serialized through a single apply queue
(arrival order); last-write-wins timestamps then resolve true concurrency.
Acked events are persisted to the append-only log before the ack is returned.
"""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass

from ..sync import ADD_MARKER, END_SESSION, SessionEvent, SessionState
from .store import DataStore, blob_sha256

MAX_POLYGONS = 400_000
MAX_BLOB_BYTES = 800 * 10**6


class ServiceError(Exception):
    code = "service_error"


class UnknownTokenError(ServiceError):
    code = "unknown_token"


class UnknownModelError(ServiceError):
    code = "unknown_model"


class LimitExceededError(ServiceError):
    code = "limit_exceeded"


class TokenConflictError(ServiceError):
    code = "token_conflict"


class NotJoinedError(ServiceError):
    code = "not_joined"


@dataclass(frozen=True)
class ModelDescriptor:
    model_id: str
    qr_token: str
    blob_size_bytes: int
    polygon_count: int
    display_name: str
    dataset_ref: str
    content_hash: str

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "qr_token": self.qr_token,
            "blob_size_bytes": self.blob_size_bytes,
            "polygon_count": self.polygon_count,
            "display_name": self.display_name,
            "dataset_ref": self.dataset_ref,
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelDescriptor":
        return cls(**{k: data[k] for k in (
            "model_id", "qr_token", "blob_size_bytes", "polygon_count",
            "display_name", "dataset_ref", "content_hash",
        )})


@dataclass(frozen=True)
class Ack:
    event_id: str
    version: int
    conflict: dict | None = None
    marker_id: int | None = None
    duplicate: bool = False


@dataclass
class JoinInfo:
    descriptor: ModelDescriptor
    snapshot: dict | None
    replay: list
    version: int
    subscription: "Subscription | None" = None


class Subscription:
    def __init__(self, session: "_Session", sub_id: int):
        self._session = session
        self._sub_id = sub_id

    def close(self):
        self._session.subscribers.pop(self._sub_id, None)


class _Session:
    def __init__(self, model_id: str):
        self.lock = threading.RLock()
        self.state = SessionState(model_id)
        self.joined: set[str] = set()
        self.acked: dict[str, Ack] = {}
        self.events: list[tuple[int, dict, dict | None]] = []
        self.subscribers: dict[int, object] = {}
        self.next_marker_id = 1
        self.sub_counter = itertools.count(1)

    def allocate_marker_id(self) -> int:
        marker_id = self.next_marker_id
        self.next_marker_id += 1
        return marker_id


class SessionService:
    """In-process server core; the FastAPI app and the CLI both drive this."""

    def __init__(self, store: DataStore | None = None, snapshot_interval: int = 100):
        self.store = store
        self.snapshot_interval = snapshot_interval
        self._lock = threading.RLock()
        self._by_token: dict[str, ModelDescriptor] = {}
        self._by_model: dict[str, ModelDescriptor] = {}
        self._blobs: dict[str, bytes] = {}  # in-memory mode only
        self._sessions: dict[str, _Session] = {}
        if store is not None:
            self._recover()

    # -- registry ---------------------------------------------------------------

    def register_model(
        self,
        blob: bytes,
        *,
        qr_token: str,
        display_name: str,
        polygon_count: int,
        model_id: str | None = None,
        dataset_ref: str | None = None,
    ) -> ModelDescriptor:
        if not qr_token:
            raise TokenConflictError("qr_token must be non-empty")
        if polygon_count > MAX_POLYGONS:
            raise LimitExceededError(f"polygon_count {polygon_count} exceeds the {MAX_POLYGONS} limit")
        if len(blob) > MAX_BLOB_BYTES:
            raise LimitExceededError(f"model blob of {len(blob)} bytes exceeds the {MAX_BLOB_BYTES} byte limit")
        content_hash = blob_sha256(blob)
        with self._lock:
            existing = self._by_token.get(qr_token)
            if existing is not None:
                if existing.content_hash == content_hash and existing.polygon_count == polygon_count:
                    return existing
                raise TokenConflictError(f"qr_token {qr_token!r} already registered with different content")
            descriptor = ModelDescriptor(
                model_id=model_id or f"model-{content_hash[:12]}",
                qr_token=qr_token,
                blob_size_bytes=len(blob),
                polygon_count=polygon_count,
                display_name=display_name,
                dataset_ref=dataset_ref or f"dataset://{content_hash[:16]}",
                content_hash=content_hash,
            )
            if descriptor.model_id in self._by_model:
                raise TokenConflictError(f"model_id {descriptor.model_id!r} already registered")
            if self.store is not None:
                self.store.write_blob(blob)
            else:
                self._blobs[content_hash] = blob
            self._by_token[qr_token] = descriptor
            self._by_model[descriptor.model_id] = descriptor
            if self.store is not None:
                self.store.save_registry({t: d.to_dict() for t, d in self._by_token.items()})
            return descriptor

    def resolve_qr(self, token: str) -> ModelDescriptor:
        descriptor = self._by_token.get(token)
        if descriptor is None:
            raise UnknownTokenError(f"unknown QR token {token!r}; scan a different QR code")
        return descriptor

    def descriptor_for(self, model_id: str) -> ModelDescriptor:
        descriptor = self._by_model.get(model_id)
        if descriptor is None:
            raise UnknownModelError(f"unknown model {model_id!r}")
        return descriptor

    def fetch_model(self, model_id: str, offset: int = 0, length: int | None = None) -> bytes:
        descriptor = self.descriptor_for(model_id)
        if offset < 0 or (length is not None and length < 0):
            raise ValueError("offset and length must be non-negative")
        if self.store is not None:
            return self.store.read_blob(descriptor.content_hash, offset, length)
        data = self._blobs[descriptor.content_hash]
        return data[offset:] if length is None else data[offset:offset + length]

    # -- sessions ---------------------------------------------------------------

    def _session(self, model_id: str) -> _Session:
        self.descriptor_for(model_id)
        with self._lock:
            session = self._sessions.get(model_id)
            if session is None:
                session = self._sessions[model_id] = _Session(model_id)
            return session

    def join(self, client_id: str, qr_token: str, last_version: int | None = None, callback=None) -> JoinInfo:
        descriptor = self.resolve_qr(qr_token)
        session = self._session(descriptor.model_id)
        with session.lock:
            session.joined.add(client_id)
            if last_version is None:
                snapshot_doc, replay = session.state.snapshot(), []
            else:
                snapshot_doc, replay = None, [item for item in session.events if item[0] > last_version]
            subscription = None
            if callback is not None:
                sub_id = next(session.sub_counter)
                session.subscribers[sub_id] = callback
                subscription = Subscription(session, sub_id)
            return JoinInfo(descriptor, snapshot_doc, replay, session.state.version, subscription)

    def subscribe(self, model_id: str, callback) -> Subscription:
        session = self._session(model_id)
        with session.lock:
            sub_id = next(session.sub_counter)
            session.subscribers[sub_id] = callback
            return Subscription(session, sub_id)

    def submit_event(self, client_id: str, model_id: str, event: SessionEvent) -> Ack:
        """Apply, persist, ack, broadcast -- in that order, atomically per session."""
        session = self._session(model_id)
        with session.lock:
            if client_id not in session.joined:
                raise NotJoinedError(f"client {client_id!r} has not joined model {model_id!r}")
            prior = session.acked.get(event.event_id)
            if prior is not None:
                return Ack(prior.event_id, prior.version, prior.conflict, prior.marker_id, duplicate=True)

            resolved = session.state.resolve_event(event, allocate_marker_id=session.allocate_marker_id)
            result = session.state.apply_event(resolved)
            assert result.applied
            version = result.version
            conflict_dict = result.conflict.to_dict() if result.conflict is not None else None
            if self.store is not None:
                # durable before ack: fsynced log write precedes the return
                self.store.append_event(model_id, version, resolved.to_dict(), conflict_dict)
            marker_id = resolved.payload.get("marker_id") if resolved.kind == ADD_MARKER else None
            ack = Ack(event.event_id, version, conflict_dict, marker_id)
            session.acked[event.event_id] = ack
            session.events.append((version, resolved.to_dict(), conflict_dict))
            for callback in list(session.subscribers.values()):
                callback(version, resolved.to_dict(), conflict_dict)
            if resolved.kind == END_SESSION or version % self.snapshot_interval == 0:
                self._persist_snapshot(model_id, session)
            return ack

    def _persist_snapshot(self, model_id: str, session: _Session):
        if self.store is not None:
            self.store.write_snapshot(model_id, session.state.snapshot())

    # -- read API -----------------------------------------------------------------

    def session_snapshot(self, model_id: str) -> dict:
        session = self._session(model_id)
        with session.lock:
            return session.state.snapshot()

    def session_version(self, model_id: str) -> int:
        session = self._session(model_id)
        with session.lock:
            return session.state.version

    def event_log(self, model_id: str, after_version: int = 0) -> list[dict]:
        session = self._session(model_id)
        with session.lock:
            return [
                {"version": v, "event": e, "conflict": c}
                for v, e, c in session.events
                if v > after_version
            ]

    def ledger_history(self, model_id: str, location_id: int, label: str) -> list[dict]:
        session = self._session(model_id)
        with session.lock:
            entries = session.state.ledger().history_entries(location_id, label)
        rows = []
        for entry in entries:
            rows.append(
                {
                    "location_id": entry.location_id,
                    "timestamp_ms": entry.timestamp_ms,
                    "id": entry.record.id,
                    "damage_label": entry.record.damage_label,
                    "length": entry.record.length,
                    "perimeter": entry.record.perimeter,
                    "area": entry.record.area,
                    "date": f"{entry.record.date.day:02d}/{entry.record.date.month:02d}/{entry.record.date.year % 100:02d}",
                }
            )
        return rows

    def conflict_rows(self, model_id: str) -> list[dict]:
        """Superseded writes, newest detection first."""
        session = self._session(model_id)
        with session.lock:
            return [c.to_dict() for c in reversed(session.state.conflict_log())]

    def fingerprint(self, model_id: str) -> str:
        session = self._session(model_id)
        with session.lock:
            return session.state.fingerprint()

    def model_ids(self) -> list[str]:
        return sorted(self._by_model)

    def close(self):
        with self._lock:
            for model_id, session in self._sessions.items():
                with session.lock:
                    self._persist_snapshot(model_id, session)
            if self.store is not None:
                self.store.close()

    # -- recovery -----------------------------------------------------------------

    def _recover(self):
        for token, doc in self.store.load_registry().items():
            descriptor = ModelDescriptor.from_dict(doc)
            self._by_token[token] = descriptor
            self._by_model[descriptor.model_id] = descriptor
        for model_id in self.store.session_ids():
            if model_id not in self._by_model:
                continue
            session = _Session(model_id)
            snapshot_doc = self.store.read_snapshot(model_id)
            if snapshot_doc is not None:
                session.state = SessionState.restore(snapshot_doc)
            for line in self.store.read_log(model_id):
                event_dict, version = line["event"], line["version"]
                conflict_dict = line.get("conflict")
                if version > session.state.version:
                    session.state.apply_event(SessionEvent.from_dict(event_dict))
                session.events.append((version, event_dict, conflict_dict))
                marker_id = event_dict["payload"].get("marker_id") if event_dict["kind"] == ADD_MARKER else None
                session.acked[event_dict["event_id"]] = Ack(
                    event_dict["event_id"], version, conflict_dict, marker_id
                )
            ids = session.state.marker_ids()
            session.next_marker_id = (max(ids) + 1) if ids else 1
            self._sessions[model_id] = session

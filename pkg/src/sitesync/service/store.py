"""Durable storage: descriptor registry, content-addressed blobs, per-session
append-only event logs with periodic snapshots.

Event-log appends are flushed and fsynced before the caller acknowledges, so
an acked event survives a crash; recovery replays the log over the latest
snapshot.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path


def blob_sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class DataStore:
    def __init__(self, root):
        self.root = Path(root)
        (self.root / "blobs").mkdir(parents=True, exist_ok=True)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)
        self._log_handles: dict[str, object] = {}

    # -- registry -------------------------------------------------------------

    @property
    def _registry_path(self) -> Path:
        return self.root / "registry.json"

    def load_registry(self) -> dict:
        if not self._registry_path.exists():
            return {}
        return json.loads(self._registry_path.read_text(encoding="utf-8"))

    def save_registry(self, registry: dict):
        self._atomic_write(self._registry_path, json.dumps(registry, indent=2, sort_keys=True))

    # -- blobs ----------------------------------------------------------------

    def write_blob(self, data: bytes) -> str:
        digest = blob_sha256(data)
        path = self.root / "blobs" / digest
        if not path.exists():
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(data)
            os.replace(tmp, path)
        return digest

    def blob_size(self, digest: str) -> int:
        return (self.root / "blobs" / digest).stat().st_size

    def read_blob(self, digest: str, offset: int = 0, length: int | None = None) -> bytes:
        path = self.root / "blobs" / digest
        with open(path, "rb") as fh:
            fh.seek(offset)
            return fh.read() if length is None else fh.read(length)

    # -- event logs -----------------------------------------------------------

    def _session_dir(self, model_id: str) -> Path:
        path = self.root / "sessions" / model_id
        path.mkdir(parents=True, exist_ok=True)
        return path

    def append_event(self, model_id: str, version: int, event: dict, conflict: dict | None):
        handle = self._log_handles.get(model_id)
        if handle is None:
            handle = open(self._session_dir(model_id) / "events.ndjson", "a", encoding="utf-8")
            self._log_handles[model_id] = handle
        line = {"version": version, "event": event}
        if conflict is not None:
            line["conflict"] = conflict
        handle.write(json.dumps(line, separators=(",", ":")) + "\n")
        handle.flush()
        os.fsync(handle.fileno())

    def read_log(self, model_id: str) -> list[dict]:
        path = self.root / "sessions" / model_id / "events.ndjson"
        if not path.exists():
            return []
        lines = []
        with open(path, "r", encoding="utf-8") as fh:
            for raw in fh:
                raw = raw.strip()
                if raw:
                    lines.append(json.loads(raw))
        return lines

    # -- snapshots --------------------------------------------------------------

    def write_snapshot(self, model_id: str, doc: dict):
        self._atomic_write(self._session_dir(model_id) / "snapshot.json", json.dumps(doc))

    def read_snapshot(self, model_id: str) -> dict | None:
        path = self.root / "sessions" / model_id / "snapshot.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def session_ids(self) -> list[str]:
        sessions = self.root / "sessions"
        return sorted(p.name for p in sessions.iterdir() if p.is_dir())

    def close(self):
        for handle in self._log_handles.values():
            handle.close()
        self._log_handles.clear()

    @staticmethod
    def _atomic_write(path: Path, text: str):
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)

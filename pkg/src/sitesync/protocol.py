"""Wire grammar for the session stream.

Messages are newline-delimited JSON objects with a "kind" field, carried over
a bidirectional stream (a WebSocket in this deployment; each text frame holds
one line). Kinds: HELLO, JOIN, SNAPSHOT, EVENT, ACK, ERROR. Numeric fields are
decimal; timestamps are milliseconds since the Unix epoch. Model blobs travel
over a separate ranged-fetch HTTP channel.
"""
from __future__ import annotations

import json

HELLO = "HELLO"
JOIN = "JOIN"
SNAPSHOT = "SNAPSHOT"
EVENT = "EVENT"
ACK = "ACK"
ERROR = "ERROR"

KINDS = frozenset({HELLO, JOIN, SNAPSHOT, EVENT, ACK, ERROR})


class ProtocolError(ValueError):
    pass


def encode(message: dict) -> str:
    """One message, one line."""
    return json.dumps(message, separators=(",", ":")) + "\n"


def decode(line: str) -> dict:
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"invalid message: {exc.msg}") from exc
    if not isinstance(message, dict) or message.get("kind") not in KINDS:
        raise ProtocolError(f"unknown message kind {message.get('kind') if isinstance(message, dict) else message!r}")
    return message


def hello(client_id: str) -> dict:
    return {"kind": HELLO, "client_id": client_id}


def join(qr_token: str, last_version: int | None = None) -> dict:
    message = {"kind": JOIN, "qr_token": qr_token}
    if last_version is not None:
        message["last_version"] = last_version
    return message


def snapshot(model_id: str, doc: dict, version: int) -> dict:
    return {"kind": SNAPSHOT, "model_id": model_id, "state": doc, "version": version}


def event(event_dict: dict, version: int | None = None, conflict: dict | None = None) -> dict:
    message = {"kind": EVENT, "event": event_dict}
    if version is not None:
        message["version"] = version
    if conflict is not None:
        message["conflict"] = conflict
    return message


def ack(event_id: str, version: int, marker_id: int | None = None) -> dict:
    message = {"kind": ACK, "event_id": event_id, "version": version}
    if marker_id is not None:
        message["marker_id"] = marker_id
    return message


def error(code: str, message: str) -> dict:
    return {"kind": ERROR, "code": code, "message": message}

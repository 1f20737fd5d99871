"""Simulated headset client: scripted inspection scenarios, detection noise,
offline cache-and-replay, and timing capture.

Scenarios drive one or more clients against a session server under a seeded
cooperative scheduler, so runs are deterministic for a given (script, seed,
profile). Time is logical: the shared clock advances on the initial model load
and on explicit waits; saves and replay syncs are recorded as timing samples
without blocking the clock, which keeps event timestamps identical whether a
script runs online or queues through an outage.
"""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .damage import SegmentationOutline, make_record, record_to_dict
from .geometry import Pose, quat_from_rotation_vector, quat_multiply
from .netsim import NetworkProfile, simulate_transfer
from .sync import ADD_MARKER, APPEND_RECORD, EDIT_MARKER, END_SESSION, MOVE_MODEL, SessionEvent

DEFAULT_START_MS = 1_700_000_000_000  # logical epoch for simulated sessions


class ScenarioError(RuntimeError):
    """Script could not run to completion; carries the failing step."""

    def __init__(self, client_id: str, step_index: int, message: str):
        super().__init__(f"client {client_id!r} step {step_index}: {message}")
        self.client_id = client_id
        self.step_index = step_index


class TransportError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# detection noise


@dataclass(frozen=True)
class DetectionNoise:
    translation_sigma_m: float = 0.0
    rotation_sigma_deg: float = 0.0
    detect: bool = True


def simulate_detection(structure_pose: Pose, rng, noise: DetectionNoise) -> Pose | None:
    """Detected model pose: the structure pose under the configured noise.

    Draw order is fixed (3 translation normals, then a 3-component rotation
    vector) so an oracle over the same seed stream reproduces the samples.
    Returns None when detection is disabled, as if the target were absent.
    """
    if not noise.detect:
        return None
    offset = rng.normal(0.0, 1.0, 3) * noise.translation_sigma_m
    rotvec = rng.normal(0.0, 1.0, 3) * math.radians(noise.rotation_sigma_deg)
    orientation = quat_multiply(quat_from_rotation_vector(rotvec), structure_pose.orientation)
    return Pose(structure_pose.position + offset, orientation)


# ---------------------------------------------------------------------------
# offline queue


@dataclass
class PendingUpload:
    event: SessionEvent
    payload_bytes: int


class OfflineQueue:
    """FIFO cache of writes made without connectivity; drained only online."""

    def __init__(self):
        self._items: deque[PendingUpload] = deque()

    def __len__(self) -> int:
        return len(self._items)

    def enqueue(self, item: PendingUpload):
        self._items.append(item)

    def peek(self) -> PendingUpload:
        return self._items[0]

    def pop_acked(self, event_id: str):
        if not self._items or self._items[0].event.event_id != event_id:
            raise TransportError(f"ack for {event_id!r} does not match queue head")
        self._items.popleft()

    def items(self) -> list[PendingUpload]:
        return list(self._items)


def flush_offline(queue: OfflineQueue, submit) -> int:
    """Upload queued items in FIFO order; each is removed only after its ack.

    submit(event) must return an object with an event_id attribute (the ack).
    A transport failure mid-flush leaves the unacked remainder queued; retries
    are safe because events keep their ids.
    """
    uploaded = 0
    while len(queue):
        item = queue.peek()
        ack = submit(item.event)
        queue.pop_acked(ack.event_id)
        uploaded += 1
    return uploaded


# ---------------------------------------------------------------------------
# transports


class InProcessTransport:
    """Direct calls into a SessionService; used by tests and local simulations."""

    def __init__(self, service, client_id: str):
        self.service = service
        self.client_id = client_id
        self._inbox: deque = deque()
        self._subscription = None
        self.model_id = None

    def join(self, qr_token: str, last_version: int | None = None, expect_replay: int = 0):
        def on_event(version, event_dict, conflict):
            if event_dict.get("client_id") != self.client_id:
                self._inbox.append((version, event_dict, conflict))

        info = self.service.join(self.client_id, qr_token, last_version=last_version, callback=on_event)
        self._subscription = info.subscription
        self.model_id = info.descriptor.model_id
        return info.descriptor.to_dict(), info.snapshot, list(info.replay)

    def submit(self, event: SessionEvent):
        return self.service.submit_event(self.client_id, self.model_id, event)

    def recv_event(self):
        if not self._inbox:
            raise TransportError("no broadcast pending")
        return self._inbox.popleft()

    def disconnect(self):
        if self._subscription is not None:
            self._subscription.close()
            self._subscription = None

    def blob_size(self, descriptor: dict) -> int:
        return descriptor["blob_size_bytes"]

    def fetch_model(self, offset: int = 0, length: int | None = None) -> bytes:
        return self.service.fetch_model(self.model_id, offset, length)

    def fingerprint(self) -> str:
        return self.service.fingerprint(self.model_id)

    def event_log(self) -> list[dict]:
        return self.service.event_log(self.model_id)

    def conflicts(self) -> list[dict]:
        return self.service.conflict_rows(self.model_id)

    def close(self):
        self.disconnect()


class WsTransport:
    """Speaks the newline-delimited JSON session stream over a WebSocket, with
    blobs and reports over HTTP."""

    def __init__(self, base_url: str, client_id: str, connect_timeout: float = 5.0):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.client_id = client_id
        self.http = httpx.Client(base_url=self.base_url, timeout=connect_timeout)
        self._ws = None
        self._inbox: deque = deque()
        self.model_id = None
        self.timeout = connect_timeout

    @property
    def ws_url(self) -> str:
        scheme = "wss" if self.base_url.startswith("https") else "ws"
        host = self.base_url.split("://", 1)[1]
        return f"{scheme}://{host}/ws"

    def join(self, qr_token: str, last_version: int | None = None, expect_replay: int = 0):
        from websockets.sync.client import connect

        from . import protocol

        response = self.http.get(f"/models/qr/{qr_token}")
        if response.status_code != 200:
            raise TransportError(response.json().get("message", "join failed"))
        descriptor = response.json()
        try:
            self._ws = connect(self.ws_url, open_timeout=self.timeout)
        except OSError as exc:
            raise TransportError(f"cannot reach server: {exc}") from exc
        self._send(protocol.hello(self.client_id))
        self._send(protocol.join(qr_token, last_version))
        self.model_id = descriptor["model_id"]
        if last_version is None:
            message = self._read()
            if message["kind"] != protocol.SNAPSHOT:
                raise TransportError(f"expected SNAPSHOT, got {message['kind']}")
            return descriptor, message["state"], []
        replay = []
        for _ in range(expect_replay):
            message = self._read()
            if message["kind"] != protocol.EVENT:
                raise TransportError(f"expected replay EVENT, got {message['kind']}")
            replay.append((message["version"], message["event"], message.get("conflict")))
        return descriptor, None, replay

    def submit(self, event: SessionEvent):
        from . import protocol

        self._send(protocol.event(event.to_dict()))
        while True:
            message = self._read()
            if message["kind"] == protocol.ACK:
                return _WireAck(message["event_id"], message["version"], message.get("marker_id"))
            if message["kind"] == protocol.EVENT:
                self._inbox.append((message["version"], message["event"], message.get("conflict")))
                continue
            if message["kind"] == protocol.ERROR:
                raise TransportError(f"{message['code']}: {message['message']}")
            raise TransportError(f"unexpected {message['kind']} while awaiting ack")

    def recv_event(self):
        from . import protocol

        if self._inbox:
            return self._inbox.popleft()
        message = self._read()
        if message["kind"] != protocol.EVENT:
            raise TransportError(f"expected EVENT, got {message['kind']}")
        return message["version"], message["event"], message.get("conflict")

    def disconnect(self):
        if self._ws is not None:
            self._ws.close()
            self._ws = None

    def blob_size(self, descriptor: dict) -> int:
        return descriptor["blob_size_bytes"]

    def fetch_model(self, offset: int = 0, length: int | None = None) -> bytes:
        params = {"offset": offset}
        if length is not None:
            params["length"] = length
        return self.http.get(f"/models/{self.model_id}/blob", params=params).content

    def fingerprint(self) -> str:
        return self.http.get(f"/sessions/{self.model_id}/fingerprint").json()["fingerprint"]

    def event_log(self) -> list[dict]:
        return self.http.get(f"/sessions/{self.model_id}/events").json()

    def conflicts(self) -> list[dict]:
        return self.http.get(f"/sessions/{self.model_id}/conflicts").json()

    def close(self):
        self.disconnect()
        self.http.close()

    def _send(self, message: dict):
        from . import protocol

        try:
            self._ws.send(protocol.encode(message))
        except Exception as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def _read(self) -> dict:
        from . import protocol

        try:
            return protocol.decode(self._ws.recv(timeout=self.timeout))
        except Exception as exc:
            if isinstance(exc, TransportError):
                raise
            raise TransportError(f"receive failed: {exc}") from exc


@dataclass(frozen=True)
class _WireAck:
    event_id: str
    version: int
    marker_id: int | None = None


# ---------------------------------------------------------------------------
# scenario scripts


STEP_OPS = frozenset(
    {"join", "wait_ms", "detect", "add_marker", "edit_marker", "move_model", "measure", "go_offline", "go_online", "end_session"}
)


@dataclass(frozen=True)
class ClientScript:
    client_id: str
    steps: tuple


@dataclass(frozen=True)
class Scenario:
    name: str
    qr_token: str
    clients: tuple[ClientScript, ...]
    scheduler: str = "seeded"  # seeded | round_robin

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        clients = []
        for raw in data["clients"]:
            steps = []
            for i, step in enumerate(raw["steps"]):
                if step.get("op") not in STEP_OPS:
                    raise ValueError(f"client {raw['client_id']!r} step {i}: unknown op {step.get('op')!r}")
                steps.append(dict(step))
            clients.append(ClientScript(raw["client_id"], tuple(steps)))
        scheduler = data.get("scheduler", "seeded")
        if scheduler not in ("seeded", "round_robin"):
            raise ValueError(f"unknown scheduler {scheduler!r}")
        return cls(data.get("name", "scenario"), data["qr_token"], tuple(clients), scheduler)


def load_scenario(source) -> Scenario:
    if isinstance(source, dict):
        return Scenario.from_dict(source)
    with open(source, "r", encoding="utf-8") as fh:
        return Scenario.from_dict(json.load(fh))


@dataclass
class ScenarioReport:
    scenario: str
    model_id: str
    timings: dict
    event_trace: list
    conflicts: list
    detections: list
    final_state_hash: str
    event_accounting: dict
    errors: list

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "model_id": self.model_id,
            "timings": self.timings,
            "event_trace": self.event_trace,
            "conflicts": self.conflicts,
            "detections": self.detections,
            "final_state_hash": self.final_state_hash,
            "event_accounting": self.event_accounting,
            "errors": self.errors,
        }

    def report_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


class _SimClient:
    def __init__(self, script: ClientScript, transport):
        self.script = script
        self.transport = transport
        self.step_index = 0
        self.online = True
        self.joined = False
        self.pending_join: str | None = None
        self.last_version = 0
        self.queue = OfflineQueue()
        self.event_seq = 0
        self.ended = False

    @property
    def client_id(self) -> str:
        return self.script.client_id

    def next_event_id(self) -> str:
        self.event_seq += 1
        return f"{self.client_id}:{self.event_seq}"

    def remaining(self) -> bool:
        return self.step_index < len(self.script.steps)


class ScenarioRunner:
    """Lock-step execution of one scenario's client scripts.

    One seeded rng drives the scheduler, detection noise, and transfer jitter;
    each step settles fully (submit, ack, peer broadcast delivery) before the
    next is chosen.
    """

    def __init__(self, scenario: Scenario, transport_factory, profile: NetworkProfile, seed: int, start_ms: int = DEFAULT_START_MS):
        self.scenario = scenario
        self.profile = profile
        self.rng = np.random.default_rng(seed)
        self.clock_ms = float(start_ms)
        self.clients = [_SimClient(script, transport_factory(script.client_id)) for script in scenario.clients]
        self.refs: dict[str, int] = {}
        self.next_record_id = 1
        self.timings = {"model_load": [], "data_load": [], "data_save": []}
        self.detections: list = []
        self.errors: list = []
        self.submitted_ids: set[str] = set()
        self.duplicate_acks = 0

    # -- helpers ---------------------------------------------------------------

    def now_ms(self) -> int:
        return int(self.clock_ms)

    def transfer(self, op: str, payload_bytes: int, advance: bool = False) -> float:
        duration = simulate_transfer(self.profile, payload_bytes, self.rng)
        self.timings[op].append(duration)
        if advance:
            self.clock_ms += duration
        return duration

    def resolve_ref(self, client: _SimClient, step: dict, key: str, ref_key: str) -> int | None:
        if key in step:
            return int(step[key])
        ref = step.get(ref_key)
        if ref is None:
            raise ScenarioError(client.client_id, client.step_index, f"needs {key} or {ref_key}")
        if ref not in self.refs:
            raise ScenarioError(client.client_id, client.step_index, f"unknown marker ref {ref!r}")
        return self.refs[ref]

    # -- step execution ----------------------------------------------------------

    def run(self) -> ScenarioReport:
        rotation = 0
        while True:
            ready = [c for c in self.clients if c.remaining()]
            if not ready:
                break
            if self.scenario.scheduler == "round_robin":
                client = ready[rotation % len(ready)]
                rotation += 1
            else:
                client = ready[int(self.rng.integers(0, len(ready)))]
            step = client.script.steps[client.step_index]
            try:
                self._execute(client, step)
            except ScenarioError:
                raise
            except Exception as exc:
                raise ScenarioError(client.client_id, client.step_index, str(exc)) from exc
            client.step_index += 1
        return self._finish()

    def _execute(self, client: _SimClient, step: dict):
        op = step["op"]
        if op == "join":
            token = step.get("qr_token", self.scenario.qr_token)
            if not client.online:
                client.pending_join = token
                return
            self._join(client, token)
        elif op == "wait_ms":
            self.clock_ms += float(step["ms"])
        elif op == "detect":
            self._detect(client, step)
        elif op == "add_marker":
            # a point picked on the hologram is model-local; world-frame cursor
            # positions are resolved against the model transform at intake
            payload = {"label": step.get("label", ""), "details": step.get("details", "")}
            self._step_position(client, step, payload)
            if "marker_id" in step:
                payload["marker_id"] = int(step["marker_id"])
            event = self._make_event(client, ADD_MARKER, payload)
            self._save(client, event, ref=step.get("ref"))
        elif op == "edit_marker":
            payload = {}
            for field_name in ("label", "details"):
                if field_name in step:
                    payload[field_name] = step[field_name]
            if "world_position" in step or "local_position" in step:
                self._step_position(client, step, payload)
            payload["marker_id"] = self._marker_id_for(client, step)
            event = self._make_event(client, EDIT_MARKER, payload)
            self._save(client, event)
        elif op == "move_model":
            event = self._make_event(client, MOVE_MODEL, {"transform": dict(step["transform"])})
            self._save(client, event)
        elif op == "measure":
            self._measure(client, step)
        elif op == "go_offline":
            if client.online:
                client.online = False
                if client.joined:
                    client.transport.disconnect()
        elif op == "go_online":
            self._go_online(client)
        elif op == "end_session":
            event = self._make_event(client, END_SESSION, {})
            self._save(client, event)
            client.ended = True

    def _join(self, client: _SimClient, token: str):
        descriptor, snapshot, _replay = client.transport.join(token)
        self.transfer("model_load", client.transport.blob_size(descriptor), advance=True)
        # loaded in the background: sample the duration, don't block the clock
        # (keeps event timestamps independent of how much state peers synced)
        snapshot_bytes = len(json.dumps(snapshot).encode()) if snapshot else 256
        self.transfer("data_load", snapshot_bytes)
        client.joined = True
        client.last_version = snapshot["version"] if snapshot else 0
        client.pending_join = None

    def _detect(self, client: _SimClient, step: dict):
        noise = DetectionNoise(
            translation_sigma_m=float(step.get("translation_sigma_m", 0.0)),
            rotation_sigma_deg=float(step.get("rotation_sigma_deg", 0.0)),
            detect=bool(step.get("detect", True)),
        )
        structure_pose = Pose.from_dict(step["structure_pose"])
        detected = simulate_detection(structure_pose, self.rng, noise)
        self.detections.append(
            {
                "client_id": client.client_id,
                "step": client.step_index,
                "detected": None if detected is None else detected.to_dict(),
            }
        )

    def _marker_id_for(self, client: _SimClient, step: dict) -> int:
        marker_id = self.resolve_ref(client, step, "marker_id", "marker_ref")
        return marker_id

    @staticmethod
    def _step_position(client: _SimClient, step: dict, payload: dict):
        if "local_position" in step:
            payload["local_position"] = [float(v) for v in step["local_position"]]
        elif "world_position" in step:
            payload["world_position"] = [float(v) for v in step["world_position"]]
        else:
            raise ScenarioError(client.client_id, client.step_index, "marker step needs a position")

    def _measure(self, client: _SimClient, step: dict):
        location_id = self.resolve_ref(client, step, "location_id", "location_ref")
        outline = SegmentationOutline(np.asarray(step["points"], dtype=float), bool(step.get("closed", False)))
        record_id = step.get("record_id")
        if record_id is None:
            record_id = self.next_record_id
        self.next_record_id = max(self.next_record_id, int(record_id)) + 1
        on_date = dt.datetime.fromtimestamp(self.now_ms() / 1000.0, tz=dt.timezone.utc).date()
        record = make_record(int(record_id), step["label"], outline, on_date=on_date)
        payload = {"location_id": location_id, "record": record_to_dict(record)}
        event = self._make_event(client, APPEND_RECORD, payload)
        self._save(client, event)

    def _make_event(self, client: _SimClient, kind: str, payload: dict) -> SessionEvent:
        if not client.joined and client.pending_join is None:
            raise ScenarioError(client.client_id, client.step_index, "join must precede session steps")
        return SessionEvent(client.next_event_id(), kind, client.client_id, self.now_ms(), payload)

    def _save(self, client: _SimClient, event: SessionEvent, ref: str | None = None):
        payload_bytes = len(json.dumps(event.to_dict()).encode())
        if not client.online:
            client.queue.enqueue(PendingUpload(event, payload_bytes))
            if ref is not None and "marker_id" in event.payload:
                self.refs[ref] = event.payload["marker_id"]
            elif ref is not None:
                raise ScenarioError(
                    client.client_id, client.step_index,
                    "offline add_marker needs an explicit marker_id to be referenced later",
                )
            return
        ack = self._submit(client, event)
        if ref is not None:
            self.refs[ref] = ack.marker_id if ack.marker_id is not None else event.payload.get("marker_id")

    def _submit(self, client: _SimClient, event: SessionEvent):
        self.transfer("data_save", len(json.dumps(event.to_dict()).encode()))
        ack = client.transport.submit(event)
        if event.event_id in self.submitted_ids:
            self.duplicate_acks += 1
        self.submitted_ids.add(event.event_id)
        client.last_version = max(client.last_version, ack.version)
        self._deliver_broadcasts(exclude=client)
        return ack

    def _deliver_broadcasts(self, exclude: _SimClient):
        for peer in self.clients:
            if peer is exclude or not (peer.online and peer.joined):
                continue
            version, _event, _conflict = peer.transport.recv_event()
            peer.last_version = max(peer.last_version, version)

    def _go_online(self, client: _SimClient):
        if client.online and client.joined:
            return
        client.online = True
        if client.pending_join is not None:
            self._join(client, client.pending_join)
        elif client.joined:
            _descriptor, _snapshot, replay = client.transport.join(
                self.scenario.qr_token,
                last_version=client.last_version,
                expect_replay=self._expected_replay(client),
            )
            replay_bytes = len(json.dumps([r[1] for r in replay]).encode())
            self.transfer("data_load", replay_bytes)
            for version, _event, _conflict in replay:
                client.last_version = max(client.last_version, version)
        if len(client.queue):
            flush_offline(client.queue, lambda event: self._submit(client, event))

    def _expected_replay(self, client: _SimClient) -> int:
        online_peers = [c for c in self.clients if c.joined]
        if not online_peers:
            return 0
        latest = max(c.last_version for c in online_peers)
        return max(0, latest - client.last_version)

    # -- wrap-up ---------------------------------------------------------------

    def _finish(self) -> ScenarioReport:
        anchor = next((c for c in self.clients if c.joined), None)
        if anchor is None:
            leftover = sum(len(c.queue) for c in self.clients)
            raise ScenarioError(
                self.clients[0].client_id if self.clients else "?",
                0,
                f"no client ever joined; {leftover} queued events never uploaded",
            )
        leftover = sum(len(c.queue) for c in self.clients)
        if leftover:
            self.errors.append(f"{leftover} queued events never uploaded")
        log = anchor.transport.event_log()
        trace = [
            {
                "version": row["version"],
                "event_id": row["event"]["event_id"],
                "kind": row["event"]["kind"],
                "client_id": row["event"]["client_id"],
                "timestamp_ms": row["event"]["timestamp_ms"],
            }
            for row in log
        ]
        applied_ids = [t["event_id"] for t in trace]
        accounting = {
            "submitted": len(self.submitted_ids),
            "applied": len(applied_ids),
            "applied_unique": len(set(applied_ids)),
            "duplicate_acks": self.duplicate_acks,
            "queued_leftover": leftover,
        }
        report = ScenarioReport(
            scenario=self.scenario.name,
            model_id=anchor.transport.model_id,
            timings={op: list(samples) for op, samples in self.timings.items()},
            event_trace=trace,
            conflicts=anchor.transport.conflicts(),
            detections=self.detections,
            final_state_hash=anchor.transport.fingerprint(),
            event_accounting=accounting,
            errors=list(self.errors),
        )
        for client in self.clients:
            client.transport.close()
        return report


def run_scenario(scenario: Scenario, transport_factory, profile: NetworkProfile, seed: int, start_ms: int = DEFAULT_START_MS) -> ScenarioReport:
    return ScenarioRunner(scenario, transport_factory, profile, seed, start_ms).run()


def run_in_process(scenario: Scenario, service, profile: NetworkProfile, seed: int, start_ms: int = DEFAULT_START_MS) -> ScenarioReport:
    return run_scenario(scenario, lambda client_id: InProcessTransport(service, client_id), profile, seed, start_ms)

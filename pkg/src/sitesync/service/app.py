"""FastAPI wrapper around SessionService.

REST carries registration, ranged blob fetches, and the JSON report endpoints
(snapshot, event log, ledger history, conflict log). The live session stream
runs over a WebSocket at /ws speaking the newline-delimited JSON grammar from
sitesync.protocol: HELLO, JOIN, then EVENT submissions acked in order while
broadcasts from other clients stream back.
"""
from __future__ import annotations

import asyncio
import logging

from fastapi import FastAPI, Query, Request, Response, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse

from .. import protocol
from ..sync import SessionEvent, SyncError
from .core import (
    LimitExceededError,
    NotJoinedError,
    ServiceError,
    SessionService,
    TokenConflictError,
    UnknownModelError,
    UnknownTokenError,
)
from .schemas import ConflictRow, DescriptorOut, EventRow, HealthOut, LedgerRow

log = logging.getLogger(__name__)

# Broadcast backlog per connection before the client is cut off and must
# resume by version.
OUTBOUND_QUEUE_LIMIT = 1000

_HTTP_STATUS = {
    UnknownTokenError: 404,
    UnknownModelError: 404,
    LimitExceededError: 413,
    TokenConflictError: 409,
    NotJoinedError: 409,
}


def create_app(service: SessionService) -> FastAPI:
    app = FastAPI(title="sitesync session server")
    app.state.service = service

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request: Request, exc: ServiceError):
        status = _HTTP_STATUS.get(type(exc), 400)
        return JSONResponse(status_code=status, content={"code": exc.code, "message": str(exc)})

    @app.get("/health", response_model=HealthOut)
    async def health():
        return HealthOut(status="ok", models=len(service.model_ids()))

    @app.post("/models", response_model=DescriptorOut)
    async def register_model(
        request: Request,
        qr_token: str = Query(...),
        display_name: str = Query(""),
        polygon_count: int = Query(...),
        model_id: str | None = Query(None),
        dataset_ref: str | None = Query(None),
    ):
        blob = await request.body()
        descriptor = service.register_model(
            blob,
            qr_token=qr_token,
            display_name=display_name,
            polygon_count=polygon_count,
            model_id=model_id,
            dataset_ref=dataset_ref,
        )
        return DescriptorOut(**descriptor.to_dict())

    @app.get("/models/qr/{token}", response_model=DescriptorOut)
    async def resolve_qr(token: str):
        return DescriptorOut(**service.resolve_qr(token).to_dict())

    @app.get("/models/{model_id}/blob")
    async def fetch_blob(model_id: str, offset: int = 0, length: int | None = None):
        data = service.fetch_model(model_id, offset, length)
        return Response(content=data, media_type="application/octet-stream")

    @app.get("/sessions/{model_id}/snapshot")
    async def session_snapshot(model_id: str):
        return service.session_snapshot(model_id)

    @app.get("/sessions/{model_id}/events", response_model=list[EventRow])
    async def session_events(model_id: str, after: int = 0):
        return service.event_log(model_id, after_version=after)

    @app.get("/sessions/{model_id}/ledger", response_model=list[LedgerRow])
    async def session_ledger(model_id: str, location_id: int, label: str):
        return service.ledger_history(model_id, location_id, label)

    @app.get("/sessions/{model_id}/conflicts", response_model=list[ConflictRow])
    async def session_conflicts(model_id: str):
        return service.conflict_rows(model_id)

    @app.get("/sessions/{model_id}/fingerprint")
    async def session_fingerprint(model_id: str):
        return {"fingerprint": service.fingerprint(model_id)}

    @app.websocket("/ws")
    async def session_stream(ws: WebSocket):
        await ws.accept()
        outbound: asyncio.Queue = asyncio.Queue(maxsize=OUTBOUND_QUEUE_LIMIT)
        subscription = None
        try:
            client_id = await _expect(ws, protocol.HELLO, "client_id")
            join_msg = await _read(ws, protocol.JOIN)
            loop = asyncio.get_running_loop()
            stale = asyncio.Event()

            def on_broadcast(version: int, event_dict: dict, conflict: dict | None):
                # skip the submitter's own events; it saw them in the ACK
                if event_dict.get("client_id") == client_id:
                    return
                try:
                    outbound.put_nowait(protocol.event(event_dict, version, conflict))
                except asyncio.QueueFull:
                    loop.call_soon(stale.set)

            info = service.join(
                client_id,
                join_msg["qr_token"],
                last_version=join_msg.get("last_version"),
                callback=on_broadcast,
            )
            subscription = info.subscription
            if info.snapshot is not None:
                await _send(ws, protocol.snapshot(info.descriptor.model_id, info.snapshot, info.version))
            else:
                for version, event_dict, conflict in info.replay:
                    await _send(ws, protocol.event(event_dict, version, conflict))
            model_id = info.descriptor.model_id

            sender = asyncio.create_task(_drain(ws, outbound))
            watchdog = asyncio.create_task(stale.wait())
            try:
                while True:
                    receiver = asyncio.create_task(ws.receive_text())
                    done, _pending = await asyncio.wait(
                        {receiver, watchdog}, return_when=asyncio.FIRST_COMPLETED
                    )
                    if watchdog in done:
                        receiver.cancel()
                        await _send(ws, protocol.error("slow_consumer", "event backlog overflow; rejoin with last_version"))
                        break
                    raw = receiver.result()
                    try:
                        message = protocol.decode(raw)
                    except protocol.ProtocolError as exc:
                        await outbound.put(protocol.error("bad_message", str(exc)))
                        continue
                    if message["kind"] != protocol.EVENT:
                        await outbound.put(protocol.error("bad_message", f"unexpected {message['kind']}"))
                        continue
                    try:
                        event = SessionEvent.from_dict(message["event"])
                        ack = service.submit_event(client_id, model_id, event)
                    except (SyncError, ServiceError, ValueError) as exc:
                        code = getattr(exc, "code", "invalid_event")
                        await outbound.put(protocol.error(code, str(exc)))
                        continue
                    # enqueue the ack before yielding so it precedes any
                    # later event's broadcast in this client's stream
                    outbound.put_nowait(protocol.ack(ack.event_id, ack.version, ack.marker_id))
            finally:
                sender.cancel()
                watchdog.cancel()
        except WebSocketDisconnect:
            pass
        except protocol.ProtocolError as exc:
            try:
                await _send(ws, protocol.error("bad_message", str(exc)))
            except Exception:
                pass
        except (ServiceError, SyncError) as exc:
            try:
                await _send(ws, protocol.error(getattr(exc, "code", "error"), str(exc)))
            except Exception:
                pass
        finally:
            if subscription is not None:
                subscription.close()

    return app


async def _send(ws: WebSocket, message: dict):
    await ws.send_text(protocol.encode(message))


async def _drain(ws: WebSocket, outbound: asyncio.Queue):
    try:
        while True:
            message = await outbound.get()
            await ws.send_text(protocol.encode(message))
    except Exception:
        # connection gone; the receive loop notices and tears down
        return


async def _read(ws: WebSocket, kind: str) -> dict:
    message = protocol.decode(await ws.receive_text())
    if message["kind"] != kind:
        raise protocol.ProtocolError(f"expected {kind}, got {message['kind']}")
    return message


async def _expect(ws: WebSocket, kind: str, field: str) -> str:
    message = await _read(ws, kind)
    try:
        return message[field]
    except KeyError as exc:
        raise protocol.ProtocolError(f"{kind} missing {field!r}") from exc

"""Pydantic request/response models for the HTTP surface."""
from __future__ import annotations

from pydantic import BaseModel


class DescriptorOut(BaseModel):
    model_id: str
    qr_token: str
    blob_size_bytes: int
    polygon_count: int
    display_name: str
    dataset_ref: str
    content_hash: str


class ErrorBody(BaseModel):
    code: str
    message: str


class LedgerRow(BaseModel):
    location_id: int
    timestamp_ms: int
    id: int
    damage_label: str
    length: float
    perimeter: float
    area: float
    date: str


class EventRow(BaseModel):
    version: int
    event: dict
    conflict: dict | None = None


class ConflictRow(BaseModel):
    target: list
    losing_event: dict
    superseded_value: object = None
    winning_timestamp_ms: int
    winning_client_id: str


class HealthOut(BaseModel):
    status: str
    models: int

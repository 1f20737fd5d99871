// Live session view: mirrors the server state from one snapshot plus the
// ordered event stream. Writes resolve per field unit exactly like the
// server (last write wins on the [timestamp, client, event id] stamp), so
// the marker list always equals snapshot + applied events; the feed keeps
// strict version order and drops anything already displayed.

import type { ConflictDict, EventMessage, SessionEventDict, SnapshotMessage, Stamp } from "./protocol";

export interface TransformDict {
  pos: number[];
  quat: number[]; // w, x, y, z
  scale: number;
}

interface Register<T> {
  value: T | null;
  stamp: Stamp | null;
}

interface MarkerState {
  markerId: number;
  meta: Register<{ label: string; details: string }>;
  position: Register<number[]>;
  createdStamp: Stamp;
}

interface LedgerEntry {
  locationId: number;
  timestampMs: number;
  record: Record<string, any>;
  stamp: Stamp;
}

export interface FeedRow {
  version: number;
  eventId: string;
  kind: string;
  clientId: string;
  timestampMs: number;
  summary: string;
}

export interface MarkerRow {
  markerId: number;
  label: string;
  details: string;
  localPosition: number[];
  worldPosition: number[];
  author: string;
  modifiedMs: number;
}

export interface ConflictRow {
  target: string;
  losingClient: string;
  losingTimestampMs: number;
  supersededValue: unknown;
  winningClient: string;
  winningTimestampMs: number;
  tieBreak: boolean;
}

export interface HistoryPoint {
  timestampMs: number;
  date: string;
  length: number;
  perimeter: number;
  area: number;
}

export type ViewStatus = "connecting" | "live" | "stale" | "closed" | "error";

function stampLess(a: Stamp, b: Stamp): boolean {
  if (a[0] !== b[0]) return a[0] < b[0];
  if (a[1] !== b[1]) return a[1] < b[1];
  return a[2] < b[2];
}

function write<T>(register: Register<T>, value: T, stamp: Stamp): void {
  if (register.stamp === null || stampLess(register.stamp, stamp)) {
    register.value = value;
    register.stamp = stamp;
  }
}

function rotate(quat: number[], v: number[]): number[] {
  const [w, x, y, z] = quat;
  const [vx, vy, vz] = v;
  // t = 2 u x v; v' = v + w t + u x t
  const tx = 2 * (y * vz - z * vy);
  const ty = 2 * (z * vx - x * vz);
  const tz = 2 * (x * vy - y * vx);
  return [
    vx + w * tx + (y * tz - z * ty),
    vy + w * ty + (z * tx - x * tz),
    vz + w * tz + (x * ty - y * tx),
  ];
}

export function worldPosition(transform: TransformDict, local: number[]): number[] {
  const rotated = rotate(transform.quat, local);
  return rotated.map((value, i) => transform.scale * value + transform.pos[i]);
}

function eventStamp(event: SessionEventDict): Stamp {
  return [event.timestamp_ms, event.client_id, event.event_id];
}

function summarize(event: SessionEventDict): string {
  const payload = event.payload as Record<string, any>;
  switch (event.kind) {
    case "add_marker":
      return `added marker ${payload.marker_id} (${payload.label ?? ""})`;
    case "edit_marker":
      return `edited marker ${payload.marker_id}`;
    case "move_model":
      return "moved the model";
    case "append_record":
      return `recorded ${payload.record?.damage_label ?? "damage"} at location ${payload.location_id}`;
    case "end_session":
      return "ended the session";
    default:
      return event.kind;
  }
}

export class SessionView {
  status: ViewStatus = "connecting";
  statusMessage = "";
  modelId = "";
  version = 0;
  sealed = false;
  feed: FeedRow[] = [];

  private transform: Register<TransformDict> = { value: { pos: [0, 0, 0], quat: [1, 0, 0, 0], scale: 1 }, stamp: null };
  private markers = new Map<number, MarkerState>();
  private ledger = new Map<number, LedgerEntry>();
  private losers = new Map<string, { target: unknown[]; losingEvent: SessionEventDict; supersededValue: unknown; order: number }>();
  private loserOrder = 0;

  get modelTransform(): TransformDict {
    return this.transform.value as TransformDict;
  }

  setStatus(status: ViewStatus, message = ""): void {
    this.status = status;
    this.statusMessage = message;
  }

  applySnapshot(message: SnapshotMessage): void {
    const state = message.state;
    this.modelId = message.model_id;
    this.version = message.version;
    this.sealed = Boolean(state.sealed);
    this.transform = {
      value: state.model_transform as TransformDict,
      stamp: (state.model_transform_stamp ?? null) as Stamp | null,
    };
    this.markers.clear();
    for (const m of state.markers ?? []) {
      this.markers.set(m.marker_id, {
        markerId: m.marker_id,
        meta: { value: m.meta.value, stamp: m.meta.stamp },
        position: { value: m.position.value, stamp: m.position.stamp },
        createdStamp: m.created_stamp,
      });
    }
    this.ledger.clear();
    for (const entry of state.ledger ?? []) {
      this.ledger.set(entry.record.id, {
        locationId: entry.location_id,
        timestampMs: entry.timestamp_ms,
        record: entry.record,
        stamp: entry.stamp,
      });
    }
    this.losers.clear();
    for (const raw of state.conflicts ?? []) {
      this.noteLoser(raw.target, raw.losing_event, raw.superseded_value);
    }
  }

  /** Returns true when the message advanced the view (false for replays). */
  applyEvent(message: EventMessage): boolean {
    if (message.version <= this.version) return false;
    const event = message.event;
    const stamp = eventStamp(event);
    const payload = event.payload as Record<string, any>;
    switch (event.kind) {
      case "add_marker":
      case "edit_marker": {
        const markerId = payload.marker_id as number;
        let marker = this.markers.get(markerId);
        if (!marker) {
          marker = {
            markerId,
            meta: { value: null, stamp: null },
            position: { value: null, stamp: null },
            createdStamp: stamp,
          };
          this.markers.set(markerId, marker);
        }
        if (stampLess(stamp, marker.createdStamp)) marker.createdStamp = stamp;
        if (payload.local_position) write(marker.position, payload.local_position as number[], stamp);
        if (event.kind === "add_marker" || "label" in payload || "details" in payload) {
          write(marker.meta, { label: payload.label ?? "", details: payload.details ?? "" }, stamp);
        }
        break;
      }
      case "move_model":
        write(this.transform, payload.transform as TransformDict, stamp);
        break;
      case "append_record": {
        const record = payload.record as Record<string, any>;
        const existing = this.ledger.get(record.id);
        if (!existing || stampLess(existing.stamp, stamp)) {
          this.ledger.set(record.id, {
            locationId: payload.location_id as number,
            timestampMs: event.timestamp_ms,
            record,
            stamp,
          });
        }
        break;
      }
      case "end_session":
        this.sealed = true;
        break;
    }
    if (message.conflict) {
      this.noteLoser(message.conflict.target, message.conflict.losing_event, message.conflict.superseded_value);
    }
    this.version = message.version;
    this.feed.push({
      version: message.version,
      eventId: event.event_id,
      kind: event.kind,
      clientId: event.client_id,
      timestampMs: event.timestamp_ms,
      summary: summarize(event),
    });
    return true;
  }

  markerRows(): MarkerRow[] {
    const rows: MarkerRow[] = [];
    for (const marker of this.markers.values()) {
      const local = marker.position.value ?? [0, 0, 0];
      const stamps = [marker.meta.stamp, marker.position.stamp].filter((s): s is Stamp => s !== null);
      rows.push({
        markerId: marker.markerId,
        label: marker.meta.value?.label ?? "",
        details: marker.meta.value?.details ?? "",
        localPosition: local,
        worldPosition: worldPosition(this.modelTransform, local),
        author: marker.createdStamp[1],
        modifiedMs: stamps.length ? Math.max(...stamps.map((s) => s[0])) : marker.createdStamp[0],
      });
    }
    return rows.sort((a, b) => a.markerId - b.markerId);
  }

  historySeries(locationId: number, label: string): HistoryPoint[] {
    const points: HistoryPoint[] = [];
    for (const entry of this.ledger.values()) {
      if (entry.locationId !== locationId || entry.record.damage_label !== label) continue;
      points.push({
        timestampMs: entry.timestampMs,
        date: entry.record.date,
        length: entry.record.length,
        perimeter: entry.record.perimeter,
        area: entry.record.area,
      });
    }
    return points.sort((a, b) => a.timestampMs - b.timestampMs || a.date.localeCompare(b.date));
  }

  ledgerSize(): number {
    return this.ledger.size;
  }

  /** Superseded writes, newest detection first, resolved against current winners. */
  conflictRows(): ConflictRow[] {
    const rows: ConflictRow[] = [];
    for (const { target, losingEvent, supersededValue, order } of this.losers.values()) {
      const winner = this.winningStamp(target) ?? eventStamp(losingEvent);
      rows.push({
        target: target.join(":"),
        losingClient: losingEvent.client_id,
        losingTimestampMs: losingEvent.timestamp_ms,
        supersededValue,
        winningClient: winner[1],
        winningTimestampMs: winner[0],
        tieBreak: winner[0] === losingEvent.timestamp_ms,
        order,
      } as ConflictRow & { order: number });
    }
    return rows
      .sort((a, b) => (b as any).order - (a as any).order)
      .map(({ ...row }) => {
        delete (row as any).order;
        return row;
      });
  }

  private noteLoser(target: unknown[], losingEvent: SessionEventDict, supersededValue: unknown): void {
    const key = `${target.join(":")}|${losingEvent.event_id}`;
    if (!this.losers.has(key)) {
      this.losers.set(key, { target, losingEvent, supersededValue, order: this.loserOrder++ });
    }
  }

  private winningStamp(target: unknown[]): Stamp | null {
    const [kind, id] = target as [string, number?];
    if (kind === "model_transform") return this.transform.stamp;
    if (kind === "marker_meta") return this.markers.get(id as number)?.meta.stamp ?? null;
    if (kind === "marker_position") return this.markers.get(id as number)?.position.stamp ?? null;
    if (kind === "record") return this.ledger.get(id as number)?.stamp ?? null;
    return null;
  }
}

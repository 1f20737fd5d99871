// Wire grammar shared with the session server: newline-delimited JSON
// messages over a WebSocket. Kinds: HELLO, JOIN, SNAPSHOT, EVENT, ACK, ERROR.

export type Stamp = [number, string, string]; // timestamp_ms, client_id, event_id

export interface SessionEventDict {
  event_id: string;
  kind: string;
  client_id: string;
  timestamp_ms: number;
  payload: Record<string, unknown>;
}

export interface ConflictDict {
  target: unknown[];
  losing_event: SessionEventDict;
  superseded_value: unknown;
  winning_timestamp_ms?: number;
  winning_client_id?: string;
}

export interface SnapshotMessage {
  kind: "SNAPSHOT";
  model_id: string;
  state: Record<string, any>;
  version: number;
}

export interface EventMessage {
  kind: "EVENT";
  event: SessionEventDict;
  version: number;
  conflict?: ConflictDict | null;
}

export interface AckMessage {
  kind: "ACK";
  event_id: string;
  version: number;
  marker_id?: number;
}

export interface ErrorMessage {
  kind: "ERROR";
  code: string;
  message: string;
}

export type ServerMessage = SnapshotMessage | EventMessage | AckMessage | ErrorMessage;

export function encode(message: Record<string, unknown>): string {
  return JSON.stringify(message) + "\n";
}

export function hello(clientId: string) {
  return { kind: "HELLO", client_id: clientId };
}

export function join(qrToken: string, lastVersion?: number) {
  const message: Record<string, unknown> = { kind: "JOIN", qr_token: qrToken };
  if (lastVersion !== undefined) message.last_version = lastVersion;
  return message;
}

export function eventMessage(event: SessionEventDict) {
  return { kind: "EVENT", event };
}

const KINDS = new Set(["HELLO", "JOIN", "SNAPSHOT", "EVENT", "ACK", "ERROR"]);

/** One frame may carry one or more newline-terminated JSON lines. */
export function decodeLines(data: string): ServerMessage[] {
  const messages: ServerMessage[] = [];
  for (const line of data.split("\n")) {
    const text = line.trim();
    if (!text) continue;
    const parsed = JSON.parse(text);
    if (!parsed || !KINDS.has(parsed.kind)) {
      throw new Error(`unknown message kind ${parsed?.kind}`);
    }
    messages.push(parsed as ServerMessage);
  }
  return messages;
}

// Reconnecting session stream. Joins a model session by QR token, feeds a
// SessionView, and resumes by last seen version after a drop so no feed row
// is ever duplicated. The dashboard is read-mostly: it may annotate marker
// details text, never positions or the model transform.

import { decodeLines, encode, eventMessage, hello, join, type SessionEventDict, type ServerMessage } from "./protocol";
import type { SessionView } from "./view";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((event: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface StreamOptions {
  socketFactory?: SocketFactory;
  reconnectDelayMs?: number;
  maxReconnectDelayMs?: number;
  onChange?: () => void;
  now?: () => number;
}

export function wsUrl(baseUrl: string): string {
  const scheme = baseUrl.startsWith("https") ? "wss" : "ws";
  return `${scheme}://${baseUrl.split("://", 2)[1]}/ws`;
}

export class SessionStream {
  private socket: SocketLike | null = null;
  private closed = false;
  private joinedOnce = false;
  private attempt = 0;
  private eventSeq = 0;
  private pending = new Map<string, SessionEventDict>();
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private baseUrl: string,
    private qrToken: string,
    private clientId: string,
    private view: SessionView,
    private options: StreamOptions = {},
  ) {}

  connect(): void {
    if (this.closed) return;
    const factory = this.options.socketFactory ?? ((url: string) => new WebSocket(url) as unknown as SocketLike);
    this.view.setStatus(this.joinedOnce ? "stale" : "connecting", "connecting to session");
    this.notify();
    const socket = factory(wsUrl(this.baseUrl));
    this.socket = socket;
    socket.onopen = () => {
      socket.send(encode(hello(this.clientId)));
      const lastVersion = this.joinedOnce ? this.view.version : undefined;
      socket.send(encode(join(this.qrToken, lastVersion)));
    };
    socket.onmessage = (event) => {
      for (const message of decodeLines(event.data)) this.handle(message);
    };
    socket.onclose = () => this.handleDrop();
    socket.onerror = () => {
      /* onclose follows */
    };
  }

  close(): void {
    this.closed = true;
    if (this.reconnectTimer !== null) clearTimeout(this.reconnectTimer);
    this.socket?.close();
    if (this.view.status !== "error") this.view.setStatus("closed");
    this.notify();
  }

  /** Decision note from an off-site reviewer: details text only. */
  annotate(markerId: number, details: string, label: string): void {
    if (!this.socket || this.view.status !== "live") throw new Error("not connected");
    this.eventSeq += 1;
    const event: SessionEventDict = {
      event_id: `${this.clientId}:${this.eventSeq}`,
      kind: "edit_marker",
      client_id: this.clientId,
      timestamp_ms: (this.options.now ?? Date.now)(),
      payload: { marker_id: markerId, details, label },
    };
    this.pending.set(event.event_id, event);
    this.socket.send(encode(eventMessage(event)));
  }

  private handle(message: ServerMessage): void {
    switch (message.kind) {
      case "SNAPSHOT":
        this.view.applySnapshot(message);
        this.joinedOnce = true;
        this.attempt = 0;
        this.view.setStatus("live");
        break;
      case "EVENT":
        this.view.applyEvent(message);
        if (this.joinedOnce && this.view.status !== "live") {
          this.attempt = 0;
          this.view.setStatus("live");
        }
        this.joinedOnce = true;
        break;
      case "ACK": {
        // own annotations are not broadcast back; fold them in at ack version
        const pending = this.pending.get(message.event_id);
        if (pending) {
          this.pending.delete(message.event_id);
          this.view.applyEvent({ kind: "EVENT", event: pending, version: message.version });
        }
        break;
      }
      case "ERROR":
        if (message.code === "unknown_token") {
          this.view.setStatus("error", `${message.message} (scan a different QR code)`);
          this.close();
        } else {
          this.view.setStatus("stale", message.message);
        }
        break;
    }
    this.notify();
  }

  private handleDrop(): void {
    if (this.closed) return;
    this.view.setStatus("stale", "connection lost; reconnecting");
    this.notify();
    const base = this.options.reconnectDelayMs ?? 500;
    const cap = this.options.maxReconnectDelayMs ?? 10_000;
    const delay = Math.min(cap, base * 2 ** this.attempt);
    this.attempt += 1;
    this.reconnectTimer = setTimeout(() => this.connect(), delay);
  }

  private notify(): void {
    this.options.onChange?.();
  }
}

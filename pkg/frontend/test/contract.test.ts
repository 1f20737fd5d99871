// Replays wire messages captured from a real server session
// (fixtures/session.json, regenerated by generate_fixtures.py) so the
// dashboard's reading of the protocol is pinned to the server's writing.
import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import type { EventMessage, ServerMessage, SnapshotMessage } from "../src/protocol";
import { SessionView } from "../src/view";

const messages: ServerMessage[] = JSON.parse(
  readFileSync(new URL("./fixtures/session.json", import.meta.url), "utf-8"),
);

describe("server wire contract", () => {
  it("replays a captured session: snapshot, feed, LWW, history, conflicts", () => {
    const view = new SessionView();
    const [first, ...rest] = messages;
    expect(first.kind).toBe("SNAPSHOT");
    view.applySnapshot(first as SnapshotMessage);

    // pre-join state: the marker added before the dashboard joined
    expect(view.markerRows()).toHaveLength(1);
    expect(view.markerRows()[0].details).toBe("initial");

    for (const message of rest) {
      expect(message.kind).toBe("EVENT");
      expect(view.applyEvent(message as EventMessage)).toBe(true);
    }

    // exactly one feed row per broadcast, in version order
    expect(view.feed.map((row) => row.version)).toEqual([2, 3, 4, 5, 6]);

    // the later-stamped edit won; the earlier version is reviewable
    const marker = view.markerRows()[0];
    expect(marker.details).toBe("severe");
    const conflicts = view.conflictRows();
    const minor = conflicts.find((row) => JSON.stringify(row.supersededValue).includes("minor"));
    expect(minor).toBeDefined();
    expect(minor!.winningTimestampMs).toBe(3000);

    // history chart point count equals ledger entries for the key
    expect(view.historySeries(1, "spalling")).toHaveLength(2);
    expect(view.ledgerSize()).toBe(2);

    // parenting: the move rescaled/translated the marker's world position
    expect(marker.localPosition).toEqual([1, 2, 0]);
    expect(marker.worldPosition).toEqual([12, 4, 0]);
  });
});

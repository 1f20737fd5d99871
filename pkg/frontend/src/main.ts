import { SessionStream } from "./client";
import { renderConflicts, renderFeed, renderHistoryChart, renderMarkers, renderStatus } from "./render";
import { SessionView } from "./view";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const params = new URLSearchParams(window.location.search);
const server = params.get("server") ?? window.location.origin;
const token = params.get("token") ?? "";
const clientId = params.get("client") ?? `dashboard-${Math.random().toString(36).slice(2, 8)}`;

const view = new SessionView();

function redraw(): void {
  renderStatus(el("status"), view);
  renderMarkers(el("markers"), view);
  renderFeed(el("feed"), view);
  renderConflicts(el("conflicts"), view);
  const locationId = Number((el<HTMLInputElement>("history-location")).value || "0");
  const label = (el<HTMLInputElement>("history-label")).value || "spalling";
  renderHistoryChart(el("history-chart"), view.historySeries(locationId, label));
}

const stream = new SessionStream(server, token, clientId, view, { onChange: redraw });

el("history-location").addEventListener("change", redraw);
el("history-label").addEventListener("change", redraw);
el<HTMLFormElement>("annotate-form").addEventListener("submit", (submitEvent) => {
  submitEvent.preventDefault();
  const markerId = Number(el<HTMLInputElement>("annotate-marker").value);
  const details = el<HTMLInputElement>("annotate-details").value;
  const marker = view.markerRows().find((m) => m.markerId === markerId);
  if (marker) stream.annotate(markerId, details, marker.label);
});

if (!token) {
  view.setStatus("error", "no QR token given; add ?token=... to the URL");
  redraw();
} else {
  stream.connect();
}

// DOM rendering. Everything rebuilds from the view store; the feed list and
// conflict table are plain tables, the history chart is a hand-rolled SVG
// line chart (one line per metric).

import type { HistoryPoint, SessionView } from "./view";

const SVG_NS = "http://www.w3.org/2000/svg";

export function renderStatus(el: HTMLElement, view: SessionView): void {
  el.textContent = view.statusMessage ? `${view.status}: ${view.statusMessage}` : view.status;
  el.dataset.status = view.status;
}

export function renderMarkers(tbody: HTMLElement, view: SessionView): void {
  tbody.replaceChildren();
  for (const row of view.markerRows()) {
    const tr = document.createElement("tr");
    const world = row.worldPosition.map((v) => v.toFixed(2)).join(", ");
    for (const text of [String(row.markerId), row.label, row.details, `(${world})`, row.author]) {
      const td = document.createElement("td");
      td.textContent = text;
      tr.appendChild(td);
    }
    tbody.appendChild(tr);
  }
}

export function renderFeed(list: HTMLElement, view: SessionView): void {
  list.replaceChildren();
  for (const row of view.feed) {
    const li = document.createElement("li");
    li.dataset.version = String(row.version);
    li.textContent = `#${row.version} ${row.clientId} ${row.summary}`;
    list.appendChild(li);
  }
}

export function renderConflicts(tbody: HTMLElement, view: SessionView): void {
  tbody.replaceChildren();
  for (const row of view.conflictRows()) {
    const tr = document.createElement("tr");
    const cells = [
      row.target,
      `${row.losingClient} @ ${row.losingTimestampMs}`,
      JSON.stringify(row.supersededValue),
      `${row.winningClient} @ ${row.winningTimestampMs}${row.tieBreak ? " (tie broken by client id)" : ""}`,
    ];
    for (const text of cells) {
      const td = document.createElement("td");
      td.textContent = text;
      tr.appendChild(td);
    }
    tbody.appendChild(tr);
  }
}

const METRICS: Array<{ key: keyof HistoryPoint; color: string }> = [
  { key: "length", color: "#1f77b4" },
  { key: "perimeter", color: "#ff7f0e" },
  { key: "area", color: "#2ca02c" },
];

export function renderHistoryChart(container: HTMLElement, points: HistoryPoint[], width = 480, height = 240): void {
  container.replaceChildren();
  if (points.length === 0) {
    const empty = document.createElement("p");
    empty.className = "empty-state";
    empty.textContent = "No measurements recorded for this location and label yet.";
    container.appendChild(empty);
    return;
  }
  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("width", String(width));
  svg.setAttribute("height", String(height));

  const pad = 30;
  const times = points.map((p) => p.timestampMs);
  const tMin = Math.min(...times);
  const tMax = Math.max(...times);
  const vMax = Math.max(...points.flatMap((p) => [p.length, p.perimeter, p.area]), 1e-9);
  const xOf = (t: number) => (tMax === tMin ? width / 2 : pad + ((t - tMin) / (tMax - tMin)) * (width - 2 * pad));
  const yOf = (v: number) => height - pad - (v / vMax) * (height - 2 * pad);

  for (const metric of METRICS) {
    const line = document.createElementNS(SVG_NS, "polyline");
    line.setAttribute("fill", "none");
    line.setAttribute("stroke", metric.color);
    line.setAttribute("stroke-width", "2");
    line.setAttribute("data-metric", String(metric.key));
    line.setAttribute(
      "points",
      points.map((p) => `${xOf(p.timestampMs).toFixed(1)},${yOf(p[metric.key] as number).toFixed(1)}`).join(" "),
    );
    svg.appendChild(line);
    for (const p of points) {
      const dot = document.createElementNS(SVG_NS, "circle");
      dot.setAttribute("cx", xOf(p.timestampMs).toFixed(1));
      dot.setAttribute("cy", yOf(p[metric.key] as number).toFixed(1));
      dot.setAttribute("r", "3");
      dot.setAttribute("fill", metric.color);
      dot.setAttribute("data-metric", String(metric.key));
      svg.appendChild(dot);
    }
  }
  container.appendChild(svg);
}

// HTML string rendering. Views are pure functions of the data models so the
// tests can assert on structure without a browser; app.ts mounts the strings.

import { StatusBoard } from "./board.js";
import { ChartModel } from "./chart.js";
import { DryRunTrace, ValidationProblem, traceLines } from "./rule-editor.js";
import { NavRoute } from "./routes.js";

export function escapeHtml(text: unknown): string {
  return String(text)
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function renderNav(routes: NavRoute[], active: string | null): string {
  const items = routes.map((route) => {
    const cls = route.id === active ? ' class="active"' : "";
    return `<li${cls}><a href="${route.hash}" data-route="${route.id}">` +
      `${escapeHtml(route.title)}</a></li>`;
  });
  return `<nav><ul>${items.join("")}</ul></nav>`;
}

export function renderBoard(board: StatusBoard): string {
  const head = ["participant", "group", ...board.streams, ""]
    .map((h) => `<th>${escapeHtml(h)}</th>`).join("");
  const rows = board.rows.map((row) => {
    const cells = board.streams.map((stream) => {
      const cell = row.perStream[stream];
      if (!cell) return "<td>-</td>";
      const pct = Math.round(cell.coverage * 100);
      return `<td data-stream="${escapeHtml(stream)}" data-count="${cell.count}">` +
        `${pct}% (${cell.count})</td>`;
    }).join("");
    const flag = row.flagged ? ' class="flagged"' : "";
    const button = `<td><button data-notify="${escapeHtml(row.participant)}">` +
      "notify</button></td>";
    return `<tr${flag}><td>${escapeHtml(row.participant)}</td>` +
      `<td>${escapeHtml(row.group)}</td>${cells}${button}</tr>`;
  });
  return `<table class="board"><thead><tr>${head}</tr></thead>` +
    `<tbody>${rows.join("")}</tbody></table>`;
}

export function renderChart(model: ChartModel, width = 640, height = 200): string {
  const points = model.points;
  if (points.length === 0) {
    return '<div class="chart empty">no data in range</div>';
  }
  const values = points.map((p) => p.value);
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  const step = points.length > 1 ? width / (points.length - 1) : 0;
  const coords = points.map((p, i) => {
    const x = (i * step).toFixed(1);
    const y = (height - ((p.value - lo) / span) * height).toFixed(1);
    return `${x},${y}`;
  });
  const markers = model.markers.map((m) => {
    return `<span class="marker" data-t="${escapeHtml(m.timestamp)}"></span>`;
  }).join("");
  return `<figure class="chart" data-fn="${model.query.fn}" ` +
    `data-points="${points.length}">` +
    `<svg viewBox="0 0 ${width} ${height}">` +
    `<polyline fill="none" points="${coords.join(" ")}"/></svg>` +
    `${markers}</figure>`;
}

export function renderTrace(trace: DryRunTrace): string {
  const lines = traceLines(trace)
    .map((line) => `<li>${escapeHtml(line)}</li>`).join("");
  return `<div class="trace" data-status="${escapeHtml(trace.status)}">` +
    `<ul>${lines}</ul></div>`;
}

export function renderProblems(problems: ValidationProblem[]): string {
  const items = problems.map((p) =>
    `<li class="problem" data-path="${escapeHtml(p.path)}">` +
    `${escapeHtml(p.path)}: ${escapeHtml(p.message)}</li>`).join("");
  return `<ul class="problems">${items}</ul>`;
}

/** DOM rendering: the candidate grid and the progress dashboard.
 *
 * Points are drawn as markers on small fixed axes; each candidate tile
 * overlays the template faintly so "same class?" is answerable by eye.
 * A candidate payload (an image URI), when present, replaces the marker.
 */

import type { EmbeddingPayload, QueryBatch, SessionSummary } from "./types.js";
import { BatchSelection, completionHint, ErrorCurve } from "./state.js";

const SVG_NS = "http://www.w3.org/2000/svg";
const PALETTE = [
  "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

function svgElement(tag: string, attrs: Record<string, string>): SVGElement {
  const el = document.createElementNS(SVG_NS, tag);
  for (const [k, v] of Object.entries(attrs)) el.setAttribute(k, v);
  return el;
}

/** Map data coordinates into a tile viewport with a fixed [-r, r] window. */
function project(point: [number, number], size: number, radius: number): [number, number] {
  const scale = size / (2 * radius);
  return [size / 2 + point[0] * scale, size / 2 - point[1] * scale];
}

function pointTile(
  point: [number, number] | null,
  payload: string | null,
  template: [number, number] | null,
  size = 72,
  radius = 1.3,
): HTMLElement {
  const holder = document.createElement("div");
  holder.className = "tile-canvas";
  if (payload !== null) {
    const img = document.createElement("img");
    img.src = payload;
    img.width = size;
    img.height = size;
    holder.appendChild(img);
    return holder;
  }
  const svg = svgElement("svg", {
    width: String(size),
    height: String(size),
    viewBox: `0 0 ${size} ${size}`,
  });
  svg.appendChild(svgElement("line", {
    x1: "0", y1: String(size / 2), x2: String(size), y2: String(size / 2),
    stroke: "#ddd", "stroke-width": "1",
  }));
  svg.appendChild(svgElement("line", {
    x1: String(size / 2), y1: "0", x2: String(size / 2), y2: String(size),
    stroke: "#ddd", "stroke-width": "1",
  }));
  if (template !== null) {
    const [tx, ty] = project(template, size, radius);
    svg.appendChild(svgElement("circle", {
      cx: String(tx), cy: String(ty), r: "5",
      fill: "none", stroke: "#bbb", "stroke-width": "1.5",
    }));
  }
  if (point !== null) {
    const [px, py] = project(point, size, radius);
    svg.appendChild(svgElement("circle", {
      cx: String(px), cy: String(py), r: "5", fill: "#1f77b4",
    }));
  }
  holder.appendChild(svg);
  return holder;
}

export interface BatchHandlers {
  onToggle: (index: number) => void;
  onSubmit: () => void;
}

/** Render the open batch: template shown prominently, candidates as a
 * selectable grid; click (or a number key elsewhere) toggles a tile. */
export function renderBatch(
  container: HTMLElement,
  batch: QueryBatch,
  selection: BatchSelection,
  handlers: BatchHandlers,
): void {
  container.replaceChildren();

  const template = document.createElement("div");
  template.className = "template-panel";
  const caption = document.createElement("p");
  caption.textContent =
    batch.template_class !== null
      ? `Select every point that belongs with this template (class ${batch.template_class})`
      : "Select every point that belongs with this template";
  template.appendChild(caption);
  template.appendChild(
    pointTile(batch.template_point, batch.template_payload, null, 110),
  );
  container.appendChild(template);

  const grid = document.createElement("div");
  grid.className = "candidate-grid";
  for (const candidate of batch.candidates) {
    const tile = document.createElement("button");
    tile.type = "button";
    tile.className = "tile";
    tile.dataset.index = String(candidate.index);
    tile.dataset.node = String(candidate.node);
    if (selection.isSelected(candidate.index)) tile.classList.add("selected");
    tile.appendChild(pointTile(candidate.point, candidate.payload, batch.template_point));
    const label = document.createElement("span");
    label.className = "tile-label";
    label.textContent = String(candidate.index + 1);
    tile.appendChild(label);
    tile.addEventListener("click", () => {
      handlers.onToggle(candidate.index);
      tile.classList.toggle("selected", selection.isSelected(candidate.index));
    });
    grid.appendChild(tile);
  }
  container.appendChild(grid);

  const submit = document.createElement("button");
  submit.type = "button";
  submit.id = "submit-answers";
  submit.textContent = `Submit batch ${batch.batch_id}`;
  submit.addEventListener("click", handlers.onSubmit);
  container.appendChild(submit);
}

export function renderStaleNotice(container: HTMLElement, batchId: number): void {
  const notice = document.createElement("p");
  notice.className = "stale-notice";
  notice.textContent = `Batch ${batchId} was already answered; showing the current one.`;
  container.prepend(notice);
}

function sparkline(points: Array<[number, number]>, width = 220, height = 60): SVGElement {
  const svg = svgElement("svg", {
    width: String(width),
    height: String(height),
    viewBox: `0 0 ${width} ${height}`,
    class: "error-curve",
  });
  if (points.length === 0) return svg;
  const maxQ = Math.max(1, ...points.map(([q]) => q));
  const maxE = Math.max(1e-9, ...points.map(([, e]) => e));
  const path = points
    .map(([q, e], i) => {
      const x = (q / maxQ) * (width - 8) + 4;
      const y = height - 4 - (e / maxE) * (height - 8);
      return `${i === 0 ? "M" : "L"}${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
  svg.appendChild(svgElement("path", {
    d: path, fill: "none", stroke: "#d62728", "stroke-width": "1.5",
  }));
  const [lastQ, lastE] = points[points.length - 1];
  svg.appendChild(svgElement("circle", {
    cx: String(((lastQ / maxQ) * (width - 8) + 4).toFixed(1)),
    cy: String((height - 4 - (lastE / maxE) * (height - 8)).toFixed(1)),
    r: "3",
    fill: "#d62728",
    class: "curve-end-marker",
  }));
  return svg;
}

function embeddingScatter(embedding: EmbeddingPayload, size = 220): SVGElement {
  const svg = svgElement("svg", {
    width: String(size),
    height: String(size),
    viewBox: `0 0 ${size} ${size}`,
    class: "embedding-scatter",
  });
  const radius = Math.max(
    1e-9,
    ...embedding.points.flatMap((p) => [Math.abs(p.input[0]), Math.abs(p.input[1])]),
  ) * 1.1;
  for (const p of embedding.points) {
    const [cx, cy] = project(p.input, size, radius);
    svg.appendChild(svgElement("circle", {
      cx: String(cx.toFixed(1)),
      cy: String(cy.toFixed(1)),
      r: "3",
      fill: PALETTE[p.component % PALETTE.length],
    }));
  }
  return svg;
}

/** Render the dashboard: counts, fractions, components with the completion
 * hint, the live error curve, and the embedding scatter. */
export function renderProgress(
  container: HTMLElement,
  summary: SessionSummary,
  curve: ErrorCurve,
  embedding: EmbeddingPayload | null,
): void {
  container.replaceChildren();

  const stats = document.createElement("dl");
  stats.className = "progress-stats";
  const rows: Array<[string, string]> = [
    ["Lifecycle", summary.lifecycle + (summary.done_reason ? ` (${summary.done_reason})` : "")],
    ["Queries answered", String(summary.queries_answered)],
    ["Known entries", `${(summary.known_entry_fraction * 100).toFixed(1)}%`],
    ["Components", `${summary.component_count} / ${summary.class_count} classes`],
    [
      "Latest test error",
      summary.latest_probe_error === null
        ? "n/a"
        : summary.latest_probe_error.test_mse.toFixed(4),
    ],
  ];
  for (const [term, value] of rows) {
    const dt = document.createElement("dt");
    dt.textContent = term;
    const dd = document.createElement("dd");
    dd.textContent = value;
    stats.append(dt, dd);
  }
  container.appendChild(stats);

  if (completionHint(summary)) {
    const hint = document.createElement("p");
    hint.id = "completion-hint";
    hint.textContent =
      "Every class is a single connected group; the graph is effectively complete.";
    container.appendChild(hint);
  }

  container.appendChild(sparkline(curve.points()));
  if (summary.lifecycle === "done") {
    const done = document.createElement("p");
    done.className = "done-marker";
    done.textContent = "Run finished.";
    container.appendChild(done);
  }

  if (embedding !== null) {
    container.appendChild(embeddingScatter(embedding));
  } else {
    const placeholder = document.createElement("p");
    placeholder.className = "embedding-placeholder";
    placeholder.textContent = "Embedding view appears after the first solve.";
    container.appendChild(placeholder);
  }
}

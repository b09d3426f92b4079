// Metrics chart: one polyline per query index over a shared epoch axis,
// query 0 being the pre-active-learning baseline. Series shaping is pure;
// drawing is a thin canvas painter.

import type { MetricsRow } from "./api.js";

export interface Segment {
  queryIndex: number;
  points: { x: number; y: number }[];
}

export function buildSegments(
  rows: MetricsRow[],
  metric: "test_accuracy" | "test_loss",
): Segment[] {
  const byQuery = new Map<number, Segment>();
  rows.forEach((row, i) => {
    let segment = byQuery.get(row.query_index);
    if (!segment) {
      segment = { queryIndex: row.query_index, points: [] };
      byQuery.set(row.query_index, segment);
    }
    segment.points.push({ x: i, y: row[metric] });
  });
  return [...byQuery.values()].sort((a, b) => a.queryIndex - b.queryIndex);
}

const PALETTE = ["#888888", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                 "#9467bd", "#8c564b", "#e377c2", "#17becf"];

export function segmentColor(queryIndex: number): string {
  return PALETTE[queryIndex % PALETTE.length];
}

export function drawChart(
  canvas: HTMLCanvasElement,
  segments: Segment[],
  label: string,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const w = canvas.width;
  const h = canvas.height;
  ctx.clearRect(0, 0, w, h);
  ctx.font = "11px sans-serif";
  ctx.fillStyle = "#555";
  ctx.fillText(label, 6, 12);
  const points = segments.flatMap((s) => s.points);
  if (!points.length) return;
  const xMax = Math.max(...points.map((p) => p.x), 1);
  let yMin = Math.min(...points.map((p) => p.y));
  let yMax = Math.max(...points.map((p) => p.y));
  if (yMax - yMin < 1e-9) {
    yMin -= 0.05;
    yMax += 0.05;
  }
  const pad = 18;
  const sx = (x: number) => pad + (x / xMax) * (w - 2 * pad);
  const sy = (y: number) => h - pad - ((y - yMin) / (yMax - yMin)) * (h - 2 * pad);
  ctx.strokeStyle = "#ddd";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillText(yMax.toFixed(3), 2, sy(yMax) + 3);
  ctx.fillText(yMin.toFixed(3), 2, sy(yMin) + 3);
  for (const segment of segments) {
    ctx.strokeStyle = segmentColor(segment.queryIndex);
    ctx.lineWidth = segment.queryIndex === 0 ? 1 : 1.5;
    ctx.beginPath();
    segment.points.forEach((p, i) => {
      if (i === 0) ctx.moveTo(sx(p.x), sy(p.y));
      else ctx.lineTo(sx(p.x), sy(p.y));
    });
    ctx.stroke();
  }
}

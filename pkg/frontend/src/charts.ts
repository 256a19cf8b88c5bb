// SVG generators for plot payloads. Payloads are self-contained, so these
// are pure functions from payload to markup; no further API calls.

import { formatNumber } from "./format.js";
import type { PlotPayloadDoc } from "./types.js";

const WIDTH = 560;
const ROW = 34;
const PAD_LEFT = 150;
const PAD_RIGHT = 70;

interface Scale {
  (x: number): number;
}

function linearScale(lo: number, hi: number, outLo: number, outHi: number): Scale {
  const span = hi - lo || 1;
  return (x: number) => outLo + ((x - lo) / span) * (outHi - outLo);
}

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function num(value: unknown): number {
  return typeof value === "number" ? value : Number(value);
}

export function renderChart(payload: PlotPayloadDoc): string {
  switch (payload.kind) {
    case "ci-interval":
      return ciIntervalSvg(payload);
    case "box":
      return boxSvg(payload);
    case "timeseries":
      return timeseriesSvg(payload);
  }
}

export function ciIntervalSvg(payload: PlotPayloadDoc): string {
  const rows = payload.series;
  const height = rows.length * ROW + 40;
  const lows = rows.map((s) => num(s.low));
  const highs = rows.map((s) => num(s.high));
  const lo = Math.min(0, ...lows);
  const hi = Math.max(0, ...highs);
  const x = linearScale(lo, hi, PAD_LEFT, WIDTH - PAD_RIGHT);
  const parts = [svgOpen(height)];
  parts.push(`<line x1="${x(0).toFixed(1)}" y1="10" x2="${x(0).toFixed(1)}" ` +
    `y2="${height - 24}" stroke="#bbb" stroke-dasharray="4 3"/>`);
  rows.forEach((s, i) => {
    const y = 24 + i * ROW;
    const significant = num(s.low) > 0 || num(s.high) < 0;
    const color = significant ? (num(s.estimate) >= 0 ? "#1a7f37" : "#b42318")
      : "#555";
    parts.push(`<text x="8" y="${y + 4}" font-size="12">${esc(String(s.label))}</text>`);
    parts.push(`<line x1="${x(num(s.low)).toFixed(1)}" y1="${y}" ` +
      `x2="${x(num(s.high)).toFixed(1)}" y2="${y}" stroke="${color}" stroke-width="2"/>`);
    parts.push(`<circle cx="${x(num(s.estimate)).toFixed(1)}" cy="${y}" r="4" fill="${color}"/>`);
    parts.push(`<text x="${WIDTH - PAD_RIGHT + 8}" y="${y + 4}" font-size="11" ` +
      `fill="#333">${formatNumber(num(s.estimate))}</text>`);
  });
  parts.push(axisLabels(x, lo, hi, height));
  parts.push("</svg>");
  return parts.join("");
}

export function boxSvg(payload: PlotPayloadDoc): string {
  const rows = payload.series;
  const height = rows.length * (ROW + 14) + 40;
  const lo = Math.min(...rows.map((s) => num(s.min)));
  const hi = Math.max(...rows.map((s) => num(s.max)));
  const x = linearScale(lo, hi, PAD_LEFT, WIDTH - PAD_RIGHT);
  const parts = [svgOpen(height)];
  rows.forEach((s, i) => {
    const y = 28 + i * (ROW + 14);
    const [mn, q25, med, q75, mx] =
      [num(s.min), num(s.q25), num(s.median), num(s.q75), num(s.max)];
    parts.push(`<text x="8" y="${y + 4}" font-size="12">${esc(String(s.label))}</text>`);
    parts.push(`<line x1="${x(mn).toFixed(1)}" y1="${y}" x2="${x(q25).toFixed(1)}" y2="${y}" stroke="#557"/>`);
    parts.push(`<line x1="${x(q75).toFixed(1)}" y1="${y}" x2="${x(mx).toFixed(1)}" y2="${y}" stroke="#557"/>`);
    parts.push(`<rect x="${x(q25).toFixed(1)}" y="${y - 10}" ` +
      `width="${(x(q75) - x(q25)).toFixed(1)}" height="20" fill="#dde4f7" stroke="#557"/>`);
    parts.push(`<line x1="${x(med).toFixed(1)}" y1="${y - 10}" x2="${x(med).toFixed(1)}" ` +
      `y2="${y + 10}" stroke="#224" stroke-width="2"/>`);
    for (const tick of [mn, mx]) {
      parts.push(`<line x1="${x(tick).toFixed(1)}" y1="${y - 6}" ` +
        `x2="${x(tick).toFixed(1)}" y2="${y + 6}" stroke="#557"/>`);
    }
  });
  parts.push(axisLabels(x, lo, hi, height));
  parts.push("</svg>");
  return parts.join("");
}

export function timeseriesSvg(payload: PlotPayloadDoc): string {
  const points = payload.series;
  const height = 220;
  const lows = points.map((s) => num(s.low));
  const highs = points.map((s) => num(s.high));
  const lo = Math.min(0, ...lows);
  const hi = Math.max(0, ...highs);
  const y = linearScale(lo, hi, height - 40, 16);
  const x = linearScale(0, Math.max(points.length - 1, 1), PAD_LEFT / 2, WIDTH - PAD_RIGHT);
  const parts = [svgOpen(height)];
  parts.push(`<line x1="${PAD_LEFT / 2 - 10}" y1="${y(0).toFixed(1)}" ` +
    `x2="${WIDTH - PAD_RIGHT + 10}" y2="${y(0).toFixed(1)}" stroke="#bbb" stroke-dasharray="4 3"/>`);
  const path = points.map((s, i) =>
    `${i === 0 ? "M" : "L"}${x(i).toFixed(1)},${y(num(s.estimate)).toFixed(1)}`).join(" ");
  points.forEach((s, i) => {
    parts.push(`<line x1="${x(i).toFixed(1)}" y1="${y(num(s.low)).toFixed(1)}" ` +
      `x2="${x(i).toFixed(1)}" y2="${y(num(s.high)).toFixed(1)}" stroke="#888"/>`);
    parts.push(`<circle cx="${x(i).toFixed(1)}" cy="${y(num(s.estimate)).toFixed(1)}" r="3.5" fill="#2257c4"/>`);
    parts.push(`<text x="${x(i).toFixed(1)}" y="${height - 8}" font-size="10" ` +
      `text-anchor="middle">${esc(String(s.label))}</text>`);
  });
  parts.push(`<path d="${path}" fill="none" stroke="#2257c4" stroke-width="1.5"/>`);
  parts.push("</svg>");
  return parts.join("");
}

function svgOpen(height: number): string {
  return `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${WIDTH} ${height}" ` +
    `width="${WIDTH}" height="${height}" role="img">`;
}

function axisLabels(x: Scale, lo: number, hi: number, height: number): string {
  const y = height - 8;
  return `<text x="${x(lo).toFixed(1)}" y="${y}" font-size="10" fill="#666">` +
    `${formatNumber(lo, 3)}</text>` +
    `<text x="${x(hi).toFixed(1)}" y="${y}" font-size="10" fill="#666" ` +
    `text-anchor="end">${formatNumber(hi, 3)}</text>`;
}

/** SVG builders. Curves connect service-provided grid points with straight
 * segments only — the client interpolates nothing, so a rendered curve can
 * never disagree with the numbers the service sent. All builders are pure
 * string functions, testable without a DOM. */

import { clampPi } from "./state";
import type { HistoryPoint, LambdaTerm, ModelDoc, PiRow } from "./types";

export interface PanelGeometry {
  width: number;
  height: number;
  pad: number;
}

const DEFAULT_GEOMETRY: PanelGeometry = { width: 420, height: 260, pad: 36 };

interface Scale {
  (v: number): number;
}

function linearScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const span = d1 - d0;
  return (v: number) =>
    span === 0 ? (r0 + r1) / 2 : r0 + ((v - d0) / span) * (r1 - r0);
}

function fmtTick(v: number): string {
  return Number.isInteger(v) ? String(v) : v.toFixed(2);
}

function axes(
  g: PanelGeometry,
  x0: number,
  x1: number,
  y0: number,
  y1: number,
  title: string,
): string {
  const { width: w, height: h, pad } = g;
  return [
    `<rect class="frame" x="${pad}" y="${pad}" width="${w - 2 * pad}" height="${h - 2 * pad}" fill="none" stroke="#444"/>`,
    `<text class="title" x="${w / 2}" y="${pad - 10}" text-anchor="middle">${title}</text>`,
    `<text class="tick" x="${pad}" y="${h - pad + 14}" text-anchor="middle">${fmtTick(x0)}</text>`,
    `<text class="tick" x="${w - pad}" y="${h - pad + 14}" text-anchor="middle">${fmtTick(x1)}</text>`,
    `<text class="tick" x="${pad - 4}" y="${h - pad}" text-anchor="end">${fmtTick(y0)}</text>`,
    `<text class="tick" x="${pad - 4}" y="${pad + 4}" text-anchor="end">${fmtTick(y1)}</text>`,
  ].join("");
}

function polylinePoints(xs: number[], ys: number[], sx: Scale, sy: Scale): string {
  const pts: string[] = [];
  for (let i = 0; i < xs.length; i++) {
    pts.push(`${sx(xs[i]!).toFixed(2)},${sy(ys[i]!).toFixed(2)}`);
  }
  return pts.join(" ");
}

function bandPolygon(
  xs: number[],
  lo: number[],
  hi: number[],
  sx: Scale,
  sy: Scale,
): string {
  const up: string[] = [];
  const down: string[] = [];
  for (let i = 0; i < xs.length; i++) {
    up.push(`${sx(xs[i]!).toFixed(2)},${sy(hi[i]!).toFixed(2)}`);
    down.push(`${sx(xs[xs.length - 1 - i]!).toFixed(2)},${sy(lo[xs.length - 1 - i]!).toFixed(2)}`);
  }
  return up.concat(down).join(" ");
}

/** One panel per association term; constant terms arrive from the service as
 * flat arrays and therefore draw as flat lines. */
export function renderLambdaPanels(
  model: ModelDoc,
  geometry: PanelGeometry = DEFAULT_GEOMETRY,
): string[] {
  return model.lambda.map((term) => renderLambdaPanel(term, geometry));
}

export function renderLambdaPanel(
  term: LambdaTerm,
  g: PanelGeometry = DEFAULT_GEOMETRY,
): string {
  const { width: w, height: h, pad } = g;
  const x0 = term.t[0] ?? 0;
  const x1 = term.t[term.t.length - 1] ?? 1;
  const yAll = term.lo.concat(term.hi, term.mean);
  const y0 = Math.min(...yAll);
  const y1 = Math.max(...yAll);
  const sx = linearScale(x0, x1, pad, w - pad);
  const sy = linearScale(y0 === y1 ? y0 - 1 : y0, y0 === y1 ? y1 + 1 : y1, h - pad, pad);
  return [
    `<svg class="lambda-panel" data-term="${term.term}" data-name="${term.name}" data-constant="${term.constant}" width="${w}" height="${h}" viewBox="0 0 ${w} ${h}" xmlns="http://www.w3.org/2000/svg">`,
    axes(g, x0, x1, y0, y1, `${term.name}(t)`),
    `<polygon class="band" points="${bandPolygon(term.t, term.lo, term.hi, sx, sy)}" fill="#9ecae1" opacity="0.45"/>`,
    `<polyline class="mean" points="${polylinePoints(term.t, term.mean, sx, sy)}" fill="none" stroke="#1f4e79" stroke-width="1.5"/>`,
    `</svg>`,
  ].join("");
}

/** Left pred10 panel: entered measurements joined by straight segments, with
 * a vertical dotted marker at the last visit. */
export function renderTrajectoryPanel(
  measurements: HistoryPoint[],
  t: number,
  g: PanelGeometry = DEFAULT_GEOMETRY,
): string {
  const { width: w, height: h, pad } = g;
  const times = measurements.map((m) => m.time);
  const values = measurements.map((m) => m.value);
  const x0 = 0;
  const x1 = Math.max(t, ...times, 1);
  const vLo = values.length ? Math.min(...values) : 0;
  const vHi = values.length ? Math.max(...values) : 1;
  const yPad = vLo === vHi ? 1 : 0.1 * (vHi - vLo);
  const y0 = vLo - yPad;
  const y1 = vHi + yPad;
  const sx = linearScale(x0, x1, pad, w - pad);
  const sy = linearScale(y0, y1, h - pad, pad);
  const last = times[times.length - 1];
  const parts = [
    `<svg class="trajectory-panel" width="${w}" height="${h}" viewBox="0 0 ${w} ${h}" xmlns="http://www.w3.org/2000/svg">`,
    axes(g, x0, x1, y0, y1, "biomarker history"),
  ];
  if (measurements.length > 1) {
    parts.push(
      `<polyline class="history" points="${polylinePoints(times, values, sx, sy)}" fill="none" stroke="#8c2d04" stroke-width="1.5"/>`,
    );
  }
  for (const m of measurements) {
    parts.push(
      `<circle class="visit" data-time="${m.time}" data-value="${m.value}" cx="${sx(m.time).toFixed(2)}" cy="${sy(m.value).toFixed(2)}" r="3.5" fill="#8c2d04"/>`,
    );
  }
  if (last !== undefined) {
    parts.push(
      `<line class="last-visit" data-time="${last}" x1="${sx(last).toFixed(2)}" y1="${pad}" x2="${sx(last).toFixed(2)}" y2="${h - pad}" stroke="#444" stroke-dasharray="4 3"/>`,
    );
  }
  parts.push(`</svg>`);
  return parts.join("");
}

/** Right pred10 panel: π against t + Δt on a fixed [0, 1] probability axis.
 * Coordinates use the display clamp; the data-pi attributes carry the
 * service numbers verbatim. */
export function renderPiPanel(
  rows: PiRow[],
  t: number,
  g: PanelGeometry = DEFAULT_GEOMETRY,
): string {
  const { width: w, height: h, pad } = g;
  const xs = rows.map((r) => t + r.dt);
  const x0 = t;
  const x1 = xs.length ? Math.max(...xs, t + 1e-9) : t + 1;
  const sx = linearScale(x0, x1, pad, w - pad);
  const sy = linearScale(0, 1, h - pad, pad);
  const parts = [
    `<svg class="pi-panel" width="${w}" height="${h}" viewBox="0 0 ${w} ${h}" xmlns="http://www.w3.org/2000/svg">`,
    axes(g, x0, x1, 0, 1, "event-free probability"),
  ];
  if (rows.length) {
    parts.push(
      `<polygon class="band" points="${bandPolygon(
        xs,
        rows.map((r) => clampPi(r.lo)),
        rows.map((r) => clampPi(r.hi)),
        sx,
        sy,
      )}" fill="#a1d99b" opacity="0.45"/>`,
      `<polyline class="mean" points="${polylinePoints(
        xs,
        rows.map((r) => clampPi(r.mean)),
        sx,
        sy,
      )}" fill="none" stroke="#00441b" stroke-width="1.5"/>`,
    );
  }
  for (const r of rows) {
    parts.push(
      `<circle class="pi-point" data-dt="${r.dt}" data-pi="${r.mean}" cx="${sx(t + r.dt).toFixed(2)}" cy="${sy(clampPi(r.mean)).toFixed(2)}" r="3" fill="#00441b"/>`,
    );
  }
  parts.push(`</svg>`);
  return parts.join("");
}

/** Textual result table: the exact service numbers, stringified by the
 * JavaScript shortest round-trip rule, no rounding. */
export function piTableRows(rows: PiRow[]): string[][] {
  return rows.map((r) => [String(r.dt), String(r.mean), String(r.lo), String(r.hi)]);
}

/**
 * Minimal deterministic SVG chart builder: linear scales, framed axes
 * with tick labels, polylines, scatter markers, and cell heatmaps.
 * No timestamps and no randomness, so identical inputs give identical
 * bytes.
 */

export interface Margin {
  top: number;
  right: number;
  bottom: number;
  left: number;
}

const MARGIN: Margin = { top: 34, right: 24, bottom: 46, left: 60 };

export interface Scale {
  (v: number): number;
  domain: [number, number];
  range: [number, number];
}

export function linearScale(
  domain: [number, number],
  range: [number, number],
): Scale {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const span = d1 - d0 || 1;
  const f = ((v: number) => r0 + ((v - d0) / span) * (r1 - r0)) as Scale;
  f.domain = domain;
  f.range = range;
  return f;
}

export function extent(values: number[], pad = 0): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (!Number.isFinite(lo)) return [0, 1];
  if (lo === hi) return [lo - 1, hi + 1];
  const p = (hi - lo) * pad;
  return [lo - p, hi + p];
}

function fmt(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e4 || a < 1e-3) return v.toExponential(1);
  return parseFloat(v.toPrecision(4)).toString();
}

export function ticks(lo: number, hi: number, n = 5): number[] {
  const raw = (hi - lo) / Math.max(n, 1);
  const mag = 10 ** Math.floor(Math.log10(raw));
  const step = [1, 2, 5, 10].map((m) => m * mag).find((s) => s >= raw) ?? mag;
  const out: number[] = [];
  for (let t = Math.ceil(lo / step) * step; t <= hi + 1e-12; t += step) {
    out.push(Math.abs(t) < step * 1e-9 ? 0 : t);
  }
  return out;
}

const esc = (s: string) =>
  s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");

export interface LineSeries {
  x: number[];
  y: number[];
  color: string;
  label?: string;
  dash?: string;
  width?: number;
  markers?: boolean;
  markersOnly?: boolean;
}

export interface HeatCell {
  x: number;
  y: number;
  value: number;
}

export interface ChartSpec {
  title: string;
  xLabel: string;
  yLabel: string;
  width?: number;
  height?: number;
  xDomain?: [number, number];
  yDomain?: [number, number];
  series?: LineSeries[];
  /** Uniform-grid heatmap cells; drawn under any series. */
  heat?: HeatCell[];
  heatLabel?: string;
  logY?: boolean;
}

/** Perceptually ordered dark-to-light color stops (blue/green/yellow). */
const STOPS: [number, number, number][] = [
  [68, 1, 84],
  [59, 82, 139],
  [33, 145, 140],
  [94, 201, 98],
  [253, 231, 37],
];

export function heatColor(t: number): string {
  const u = Math.min(1, Math.max(0, t)) * (STOPS.length - 1);
  const i = Math.min(STOPS.length - 2, Math.floor(u));
  const f = u - i;
  const [r0, g0, b0] = STOPS[i]!;
  const [r1, g1, b1] = STOPS[i + 1]!;
  const c = (a: number, b: number) => Math.round(a + (b - a) * f);
  return `rgb(${c(r0, r1)},${c(g0, g1)},${c(b0, b1)})`;
}

function cellPitch(coords: number[]): number {
  const uniq = [...new Set(coords)].sort((a, b) => a - b);
  if (uniq.length < 2) return 1;
  let best = Infinity;
  for (let i = 1; i < uniq.length; i++) {
    best = Math.min(best, uniq[i]! - uniq[i - 1]!);
  }
  return best;
}

export function renderChart(spec: ChartSpec): string {
  const W = spec.width ?? 560;
  const H = spec.height ?? 420;
  const m = MARGIN;
  const series = spec.series ?? [];
  const heat = spec.heat ?? [];

  const xs = [...heat.map((c) => c.x), ...series.flatMap((s) => s.x)];
  const ysRaw = [...heat.map((c) => c.y), ...series.flatMap((s) => s.y)];
  const ys = spec.logY ? ysRaw.filter((v) => v > 0) : ysRaw;
  const xDom = spec.xDomain ?? extent(xs, heat.length ? 0 : 0.02);
  let yDom = spec.yDomain ?? extent(ys, heat.length ? 0 : 0.05);
  if (spec.logY) {
    yDom = [Math.log10(yDom[0]), Math.log10(yDom[1])];
  }
  const sx = linearScale(xDom, [m.left, W - m.right]);
  const sy = linearScale(yDom, [H - m.bottom, m.top]);
  const toY = (v: number) => sy(spec.logY ? Math.log10(Math.max(v, 1e-300)) : v);

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${H}" ` +
      `viewBox="0 0 ${W} ${H}" font-family="Helvetica,Arial,sans-serif">`,
    `<rect width="${W}" height="${H}" fill="white"/>`,
  );

  if (heat.length > 0) {
    const pw = cellPitch(heat.map((c) => c.x));
    const ph = cellPitch(heat.map((c) => c.y));
    const [vLo, vHi] = extent(heat.map((c) => c.value));
    const span = vHi - vLo || 1;
    const w = Math.abs(sx(pw) - sx(0)) + 0.5;
    const h = Math.abs(sy(ph) - sy(0)) + 0.5;
    for (const c of heat) {
      const color = heatColor((c.value - vLo) / span);
      parts.push(
        `<rect x="${(sx(c.x) - w / 2).toFixed(2)}" ` +
          `y="${(sy(c.y) - h / 2).toFixed(2)}" ` +
          `width="${w.toFixed(2)}" height="${h.toFixed(2)}" fill="${color}"/>`,
      );
    }
    if (spec.heatLabel) {
      // compact color bar in the top margin
      const bx = W - m.right - 120;
      for (let i = 0; i < 60; i++) {
        parts.push(
          `<rect x="${bx + i * 1.5}" y="10" width="1.6" height="8" ` +
            `fill="${heatColor(i / 59)}"/>`,
        );
      }
      parts.push(
        `<text x="${bx - 6}" y="18" font-size="11" text-anchor="end">` +
          `${esc(spec.heatLabel)}</text>`,
        `<text x="${bx}" y="30" font-size="9">${fmt(vLo)}</text>`,
        `<text x="${bx + 90}" y="30" font-size="9" text-anchor="end">` +
          `${fmt(vHi)}</text>`,
      );
    }
  }

  // frame and ticks
  const axisColor = "#333";
  parts.push(
    `<rect x="${m.left}" y="${m.top}" width="${W - m.left - m.right}" ` +
      `height="${H - m.top - m.bottom}" fill="none" stroke="${axisColor}"/>`,
  );
  for (const t of ticks(xDom[0], xDom[1])) {
    const x = sx(t);
    parts.push(
      `<line x1="${x.toFixed(2)}" y1="${H - m.bottom}" ` +
        `x2="${x.toFixed(2)}" y2="${H - m.bottom + 5}" stroke="${axisColor}"/>`,
      `<text x="${x.toFixed(2)}" y="${H - m.bottom + 18}" font-size="11" ` +
        `text-anchor="middle">${fmt(t)}</text>`,
    );
  }
  for (const t of ticks(yDom[0], yDom[1])) {
    const y = sy(t);
    const label = spec.logY ? `1e${fmt(t)}` : fmt(t);
    parts.push(
      `<line x1="${m.left - 5}" y1="${y.toFixed(2)}" x2="${m.left}" ` +
        `y2="${y.toFixed(2)}" stroke="${axisColor}"/>`,
      `<text x="${m.left - 8}" y="${(y + 4).toFixed(2)}" font-size="11" ` +
        `text-anchor="end">${label}</text>`,
    );
  }

  for (const s of series) {
    const w = s.width ?? 1.5;
    const pts = s.x
      .map((xv, i) => [sx(xv), toY(s.y[i]!)] as const)
      .filter(([px, py]) => Number.isFinite(px) && Number.isFinite(py));
    if (!s.markersOnly && pts.length > 1) {
      const d = pts.map(([px, py]) => `${px.toFixed(2)},${py.toFixed(2)}`);
      parts.push(
        `<polyline points="${d.join(" ")}" fill="none" stroke="${s.color}" ` +
          `stroke-width="${w}"${s.dash ? ` stroke-dasharray="${s.dash}"` : ""}/>`,
      );
    }
    if (s.markers || s.markersOnly) {
      for (const [px, py] of pts) {
        parts.push(
          `<circle cx="${px.toFixed(2)}" cy="${py.toFixed(2)}" r="2.6" ` +
            `fill="${s.color}"/>`,
        );
      }
    }
  }

  // legend for labeled series
  const labeled = series.filter((s) => s.label);
  labeled.forEach((s, i) => {
    const y = m.top + 16 + 16 * i;
    const x = m.left + 12;
    parts.push(
      `<line x1="${x}" y1="${y - 4}" x2="${x + 22}" y2="${y - 4}" ` +
        `stroke="${s.color}" stroke-width="2"` +
        `${s.dash ? ` stroke-dasharray="${s.dash}"` : ""}/>`,
      `<text x="${x + 28}" y="${y}" font-size="11">${esc(s.label!)}</text>`,
    );
  });

  parts.push(
    `<text x="${(m.left + W - m.right) / 2}" y="20" font-size="13" ` +
      `text-anchor="middle" font-weight="bold">${esc(spec.title)}</text>`,
    `<text x="${(m.left + W - m.right) / 2}" y="${H - 10}" font-size="12" ` +
      `text-anchor="middle">${esc(spec.xLabel)}</text>`,
    `<text x="16" y="${(m.top + H - m.bottom) / 2}" font-size="12" ` +
      `text-anchor="middle" transform="rotate(-90 16 ` +
      `${(m.top + H - m.bottom) / 2})">${esc(spec.yLabel)}</text>`,
    `</svg>`,
  );
  return parts.join("\n") + "\n";
}

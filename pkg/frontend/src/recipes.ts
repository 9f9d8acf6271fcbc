/**
 * Figure recipes: each one names the CSV tables it consumes (with the
 * columns it requires) and turns them into one or more SVG documents.
 * Recipes only read the artifact directory; they never write into it.
 */

import { column, loadTable, select, Table, uniqueSorted } from "./csv.js";
import { HeatCell, LineSeries, renderChart } from "./svg.js";

export interface RenderedFigure {
  /** Output file name, e.g. "fig2b.svg". */
  name: string;
  svg: string;
}

export interface FigureRecipe {
  id: string;
  /** Required tables (path relative to artifact dir, no extension) and columns. */
  inputs: Record<string, string[]>;
  render(dir: string): RenderedFigure[];
}

const BLUE = "#1f77b4";
const ORANGE = "#ff7f0e";
const GREEN = "#2ca02c";
const RED = "#d62728";
const GRAY = "#777777";

const DETUNING = "Δ/γ";
const SEPARATION = "L/λ";
const TIME = "γt";
const MOMENTUM = "kλ";

function load(dir: string, recipe: FigureRecipe, name: string): Table {
  return loadTable(dir, name, recipe.inputs[name] ?? []);
}

function heatCells(t: Table, x: string, y: string, v: string): HeatCell[] {
  const xs = column(t, x);
  const ys = column(t, y);
  const vs = column(t, v);
  return xs.map((xv, i) => ({ x: xv, y: ys[i]!, value: vs[i]! }));
}

const fig1a: FigureRecipe = {
  id: "fig1a",
  inputs: {
    tmap: ["separation", "detuning", "t_abs2"],
    resonance: ["separation", "delta_star"],
  },
  render(dir) {
    const tmap = load(dir, this, "tmap");
    const res = load(dir, this, "resonance");
    const svg = renderChart({
      title: "Transmission vs detuning and layer separation",
      xLabel: DETUNING,
      yLabel: SEPARATION,
      heat: heatCells(tmap, "detuning", "separation", "t_abs2"),
      heatLabel: "|t|²",
      series: [
        {
          x: column(res, "delta_star"),
          y: column(res, "separation"),
          color: "white",
          width: 1.2,
          dash: "4 3",
          label: "resonance",
        },
      ],
    });
    return [{ name: "fig1a.svg", svg }];
  },
};

const fig1c: FigureRecipe = {
  id: "fig1c",
  inputs: { spectrum: ["detuning", "t_abs2", "r_abs2"] },
  render(dir) {
    const spec = load(dir, this, "spectrum");
    const x = column(spec, "detuning");
    const svg = renderChart({
      title: "Finite-array transmission and reflection",
      xLabel: DETUNING,
      yLabel: "|t|², |r|²",
      yDomain: [0, 1.02],
      series: [
        { x, y: column(spec, "t_abs2"), color: BLUE, label: "|t|²" },
        { x, y: column(spec, "r_abs2"), color: RED, label: "|r|²" },
      ],
    });
    return [{ name: "fig1c.svg", svg }];
  },
};

const fig2bc: FigureRecipe = {
  id: "fig2bc",
  inputs: {
    g2curve: ["time", "g2", "pop_slow", "pop_fast"],
    g2summary: ["g2_min", "t_at_min", "delay"],
  },
  render(dir) {
    const curve = load(dir, this, "g2curve");
    const summary = load(dir, this, "g2summary");
    const t = column(curve, "time");
    const pops = renderChart({
      title: "Mode populations after a detection event",
      xLabel: TIME,
      yLabel: "excited population",
      logY: true,
      series: [
        { x: t, y: column(curve, "pop_slow"), color: BLUE, label: "slow mode" },
        { x: t, y: column(curve, "pop_fast"), color: ORANGE, label: "fast mode" },
      ],
    });
    const g2 = renderChart({
      title: "Photon coincidence correlation",
      xLabel: TIME,
      yLabel: "g²(t)",
      series: [
        { x: t, y: column(curve, "g2"), color: BLUE },
        {
          x: column(summary, "t_at_min"),
          y: column(summary, "g2_min"),
          color: RED,
          markersOnly: true,
          label: "minimum",
        },
      ],
    });
    return [
      { name: "fig2b.svg", svg: pops },
      { name: "fig2c.svg", svg: g2 },
    ];
  },
};

const fig3: FigureRecipe = {
  id: "fig3",
  inputs: { delayscan: ["separation", "delay", "t_abs2"] },
  render(dir) {
    const scan = load(dir, this, "delayscan");
    const x = column(scan, "separation");
    const delay = renderChart({
      title: "Group delay along the slow-mode branch",
      xLabel: SEPARATION,
      yLabel: "delay (1/γ)",
      logY: true,
      series: [{ x, y: column(scan, "delay"), color: BLUE, markers: true }],
    });
    return [{ name: "fig3.svg", svg: delay }];
  },
};

const fig4: FigureRecipe = {
  id: "fig4",
  inputs: {
    pairmap: ["time", "k2x", "k2y", "density"],
    axiscut: ["time", "k1y", "k2y", "density"],
  },
  render(dir) {
    const pair = load(dir, this, "pairmap");
    const cut = load(dir, this, "axiscut");
    const out: RenderedFigure[] = [];
    for (const time of uniqueSorted(column(pair, "time"))) {
      const rows = select(pair, ["k2x", "k2y", "density"], (r) => r.time === time);
      out.push({
        name: `fig4-pair-t${time}.svg`,
        svg: renderChart({
          title: `Partner-photon momentum density, γt = ${time}`,
          xLabel: MOMENTUM,
          yLabel: MOMENTUM,
          heat: rows.map((r) => ({ x: r.k2x!, y: r.k2y!, value: r.density! })),
          heatLabel: "density",
        }),
      });
    }
    for (const time of uniqueSorted(column(cut, "time"))) {
      const rows = select(cut, ["k1y", "k2y", "density"], (r) => r.time === time);
      out.push({
        name: `fig4-axis-t${time}.svg`,
        svg: renderChart({
          title: `Two-photon density along the axis, γt = ${time}`,
          xLabel: MOMENTUM,
          yLabel: MOMENTUM,
          heat: rows.map((r) => ({ x: r.k1y!, y: r.k2y!, value: r.density! })),
          heatLabel: "density",
        }),
      });
    }
    return out;
  },
};

const figS1: FigureRecipe = {
  id: "figS1",
  inputs: {
    shift: ["separation", "shift", "width", "dipole_model", "sine_model"],
  },
  render(dir) {
    const t = load(dir, this, "shift");
    const x = column(t, "separation");
    const shift = renderChart({
      title: "Resonance shift vs layer separation",
      xLabel: SEPARATION,
      yLabel: "shift (γ)",
      series: [
        { x, y: column(t, "shift"), color: BLUE, label: "coupled layers" },
        {
          x,
          y: column(t, "dipole_model"),
          color: GRAY,
          dash: "5 3",
          label: "near-field dipole",
        },
        {
          x,
          y: column(t, "sine_model"),
          color: GREEN,
          dash: "2 3",
          label: "far-field sine",
        },
      ],
    });
    const width = renderChart({
      title: "Collective linewidth vs layer separation",
      xLabel: SEPARATION,
      yLabel: "linewidth (γ)",
      series: [{ x, y: column(t, "width"), color: BLUE }],
    });
    return [
      { name: "figS1-shift.svg", svg: shift },
      { name: "figS1-width.svg", svg: width },
    ];
  },
};

const figS3: FigureRecipe = {
  id: "figS3",
  inputs: {
    modeprofile: ["k_perp", "amplitude"],
    tailfraction: ["waist", "epsilon", "fraction"],
  },
  render(dir) {
    const profile = load(dir, this, "modeprofile");
    const tails = load(dir, this, "tailfraction");
    const prof = renderChart({
      title: "Beam overlap with transverse momentum modes",
      xLabel: MOMENTUM,
      yLabel: "amplitude",
      series: [
        { x: column(profile, "k_perp"), y: column(profile, "amplitude"), color: BLUE },
      ],
    });
    const series: LineSeries[] = uniqueSorted(column(tails, "epsilon")).map(
      (eps, i) => {
        const rows = select(tails, ["waist", "fraction"], (r) => r.epsilon === eps);
        return {
          x: rows.map((r) => r.waist!),
          y: rows.map((r) => r.fraction!),
          color: [BLUE, ORANGE, GREEN, RED][i % 4]!,
          label: `tail > ${eps}·k`,
        };
      },
    );
    const tail = renderChart({
      title: "Weight outside the paraxial window vs beam waist",
      xLabel: "waist (λ)",
      yLabel: "tail fraction",
      logY: true,
      series,
    });
    return [
      { name: "figS3-profile.svg", svg: prof },
      { name: "figS3-tails.svg", svg: tail },
    ];
  },
};

const S4_SPACINGS = ["0.6", "0.8"] as const;

const figS4: FigureRecipe = {
  id: "figS4",
  inputs: Object.fromEntries(
    S4_SPACINGS.flatMap((s) => [
      [`spacing-${s}/gspectrum`, ["detuning", "t_abs2"]],
      [`spacing-${s}/dispersionmap`, ["kx", "ky", "shift"]],
    ]),
  ),
  render(dir) {
    const out: RenderedFigure[] = [];
    const series: LineSeries[] = [];
    S4_SPACINGS.forEach((s, i) => {
      const spec = load(dir, this, `spacing-${s}/gspectrum`);
      series.push({
        x: column(spec, "detuning"),
        y: column(spec, "t_abs2"),
        color: [BLUE, ORANGE][i]!,
        label: `a = ${s}λ`,
      });
      const disp = load(dir, this, `spacing-${s}/dispersionmap`);
      out.push({
        name: `figS4-dispersion-${s}.svg`,
        svg: renderChart({
          title: `Momentum-resolved resonance shift, a = ${s}λ`,
          xLabel: MOMENTUM,
          yLabel: MOMENTUM,
          heat: heatCells(disp, "kx", "ky", "shift"),
          heatLabel: "shift (γ)",
        }),
      });
    });
    out.unshift({
      name: "figS4-spectrum.svg",
      svg: renderChart({
        title: "Gaussian-beam transmission for two lattice spacings",
        xLabel: DETUNING,
        yLabel: "|t|²",
        yDomain: [0, 1.02],
        series,
      }),
    });
    return out;
  },
};

const figS5: FigureRecipe = {
  id: "figS5",
  inputs: {
    modes: [
      "separation",
      "shift_plus",
      "width_plus",
      "shift_minus",
      "width_minus",
      "fit_shift_plus",
      "fit_width_plus",
      "fit_shift_minus",
      "fit_width_minus",
    ],
  },
  render(dir) {
    const t = load(dir, this, "modes");
    const x = column(t, "separation");
    const pair = (field: string, label: string): LineSeries[] => [
      {
        x,
        y: column(t, `${field}_plus`),
        color: BLUE,
        label: `symmetric ${label}`,
      },
      {
        x,
        y: column(t, `fit_${field}_plus`),
        color: BLUE,
        markersOnly: true,
        label: "fit (symmetric)",
      },
      {
        x,
        y: column(t, `${field}_minus`),
        color: ORANGE,
        label: `antisymmetric ${label}`,
      },
      {
        x,
        y: column(t, `fit_${field}_minus`),
        color: ORANGE,
        markersOnly: true,
        label: "fit (antisymmetric)",
      },
    ];
    const shift = renderChart({
      title: "Mode shifts: dynamics fit vs linear response",
      xLabel: SEPARATION,
      yLabel: "shift (γ)",
      series: pair("shift", "shift"),
    });
    const width = renderChart({
      title: "Mode widths: dynamics fit vs linear response",
      xLabel: SEPARATION,
      yLabel: "width (γ)",
      series: pair("width", "width"),
    });
    return [
      { name: "figS5-shift.svg", svg: shift },
      { name: "figS5-width.svg", svg: width },
    ];
  },
};

export const RECIPES: Record<string, FigureRecipe> = Object.fromEntries(
  [fig1a, fig1c, fig2bc, fig3, fig4, figS1, figS3, figS4, figS5].map((r) => [
    r.id,
    r,
  ]),
);

export function renderFigure(id: string, dir: string): RenderedFigure[] {
  const recipe = RECIPES[id];
  if (!recipe) {
    const known = Object.keys(RECIPES).join(", ");
    throw new Error(`unknown figure id "${id}"; known ids: ${known}`);
  }
  return recipe.render(dir);
}

import type { EChartsOption, SeriesOption } from "echarts";

import { Row, asNumber, requireColumns } from "./csv.js";

const MARKERS = ["circle", "rect", "triangle", "diamond", "pin", "arrow"];

function groupMean(
  rows: Row[],
  key: (r: Row) => string,
  x: (r: Row) => number,
  y: (r: Row) => number,
): Map<string, [number, number][]> {
  const acc = new Map<string, Map<number, { sum: number; n: number }>>();
  for (const row of rows) {
    const k = key(row);
    const xv = x(row);
    const yv = y(row);
    if (!acc.has(k)) acc.set(k, new Map());
    const points = acc.get(k)!;
    if (!points.has(xv)) points.set(xv, { sum: 0, n: 0 });
    const cell = points.get(xv)!;
    cell.sum += yv;
    cell.n += 1;
  }
  const series = new Map<string, [number, number][]>();
  for (const [k, points] of acc) {
    const data = [...points.entries()]
      .map(([xv, { sum, n }]): [number, number] => [xv, sum / n])
      .sort((a, b) => a[0] - b[0]);
    series.set(k, data);
  }
  return series;
}

function lineChart(series: Map<string, [number, number][]>, xName: string,
                   yName: string, title: string): EChartsOption {
  const names = [...series.keys()].sort();
  return {
    animation: false,
    title: { text: title, left: "center" },
    legend: { data: names, bottom: 0 },
    grid: { left: 60, right: 30, top: 50, bottom: 60 },
    xAxis: { type: "value", name: xName, nameLocation: "middle", nameGap: 28 },
    yAxis: { type: "value", name: yName, nameLocation: "middle", nameGap: 42, scale: true },
    series: names.map((name, i): SeriesOption => ({
      type: "line",
      name,
      symbol: MARKERS[i % MARKERS.length],
      symbolSize: 8,
      data: series.get(name)!,
    })),
  };
}

/** Estimation-quality curves: one series per (scheme, tau), dB averaged
 *  across trials per UE count. */
export function buildNmseOption(rows: Row[]): EChartsOption {
  requireColumns(rows, ["scheme", "K", "L", "tau", "trial", "nmse_db"], "nmse");
  const series = groupMean(
    rows,
    (r) => `${r.scheme} (tau=${r.tau})`,
    (r) => asNumber(r.K, "K"),
    (r) => asNumber(r.nmse_db, "nmse_db"),
  );
  return lineChart(series, "number of UEs (K = L)", "NMSE [dB]",
                   "Channel-estimation NMSE vs UE count");
}

/** Effective-SE curves: one series per scheme, means over feasible trials. */
export function buildSeOption(rows: Row[]): EChartsOption {
  requireColumns(rows, ["scheme", "K", "trial", "feasible", "effective_se_bits"], "se");
  const feasible = rows.filter((r) => asNumber(r.feasible, "feasible") === 1);
  if (feasible.length === 0) {
    throw new Error("no feasible trials to plot");
  }
  const series = groupMean(
    feasible,
    (r) => String(r.scheme),
    (r) => asNumber(r.K, "K"),
    (r) => asNumber(r.effective_se_bits, "effective_se_bits"),
  );
  return lineChart(series, "number of UEs (K = L)", "effective SE [bits/s/Hz]",
                   "Average spectral efficiency vs UE count");
}

function rampColor(fraction: number): string {
  // dark blue -> yellow ramp, clamped
  const t = Math.max(0, Math.min(1, fraction));
  const r = Math.round(40 + 215 * t);
  const g = Math.round(50 + 180 * t);
  const b = Math.round(140 - 110 * t);
  return `rgb(${r},${g},${b})`;
}

export interface MapBuild {
  option: EChartsOption;
  edgeCount: number;
}

/** Service map: APs colored by how many DL UEs they serve, UE markers, and
 *  one edge per associated (AP, UE) pair. */
export function buildMapOption(rows: Row[]): MapBuild {
  requireColumns(rows, ["row_type", "ap_index", "ue_index", "x_m", "y_m",
                        "served_count", "r_sp", "alpha"], "map");
  const aps = rows.filter((r) => r.row_type === "ap");
  const ues = rows.filter((r) => r.row_type === "ue");
  const edges = rows.filter((r) => r.row_type === "edge" && asNumber(r.alpha, "alpha") === 1);
  if (aps.length === 0 || ues.length === 0) {
    throw new Error("map CSV holds no AP or UE rows");
  }
  const maxServed = Math.max(1, ...aps.map((r) => asNumber(r.served_count, "served_count")));
  const nodes = [
    ...aps.map((r) => ({
      name: `ap${r.ap_index}`,
      value: [asNumber(r.x_m, "x_m"), asNumber(r.y_m, "y_m")],
      symbol: "rect",
      symbolSize: 10,
      itemStyle: { color: rampColor(asNumber(r.served_count, "served_count") / maxServed) },
    })),
    ...ues.map((r) => ({
      name: `ue${r.ue_index}`,
      value: [asNumber(r.x_m, "x_m"), asNumber(r.y_m, "y_m")],
      symbol: "triangle",
      symbolSize: 12,
      itemStyle: { color: "#d62728" },
    })),
  ];
  const links = edges.map((r) => ({
    source: `ap${r.ap_index}`,
    target: `ue${r.ue_index}`,
    lineStyle: { width: 1, opacity: 0.55 },
  }));
  const option: EChartsOption = {
    animation: false,
    title: { text: "DL service map (AP shade: served UEs)", left: "center" },
    xAxis: { type: "value", name: "x [m]", scale: true },
    yAxis: { type: "value", name: "y [m]", scale: true },
    grid: { left: 60, right: 30, top: 50, bottom: 50 },
    series: [
      {
        type: "graph",
        coordinateSystem: "cartesian2d",
        data: nodes,
        links,
        lineStyle: { color: "#888" },
      } as SeriesOption,
    ],
  };
  return { option, edgeCount: links.length };
}

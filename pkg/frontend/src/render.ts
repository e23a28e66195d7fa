import { writeFileSync } from "fs";
import * as echarts from "echarts";
import type { EChartsOption } from "echarts";

import { parseCsv } from "./csv.js";
import { buildMapOption, buildNmseOption, buildSeOption } from "./options.js";

export const KINDS = ["nmse", "se", "map"] as const;
export type Kind = (typeof KINDS)[number];

export interface FigureSpec {
  kind: Kind;
  csvPath: string;
  outPath: string;
  series?: string[]; // keep only these schemes (curve figures)
}

export function buildOption(spec: Omit<FigureSpec, "outPath">): { option: EChartsOption; note: string } {
  let { rows } = parseCsv(spec.csvPath);
  if (spec.series && spec.series.length > 0 && spec.kind !== "map") {
    const keep = new Set(spec.series);
    rows = rows.filter((r) => keep.has(String(r.scheme)));
    if (rows.length === 0) {
      throw new Error(`series filter [${spec.series.join(", ")}] matches no rows`);
    }
  }
  if (spec.kind === "nmse") {
    return { option: buildNmseOption(rows), note: "" };
  }
  if (spec.kind === "se") {
    return { option: buildSeOption(rows), note: "" };
  }
  const { option, edgeCount } = buildMapOption(rows);
  return { option, note: `${edgeCount} association edges` };
}

/** Server-side render to an SVG string (no DOM needed). */
export function renderSvg(option: EChartsOption, width = 860, height = 600): string {
  const chart = echarts.init(null as unknown as HTMLElement, null, {
    renderer: "svg",
    ssr: true,
    width,
    height,
  });
  chart.setOption(option);
  const svg = chart.renderToSVGString();
  chart.dispose();
  return svg;
}

export function renderToFile(kind: Kind, csvPath: string, outPath: string,
                             series?: string[]): string {
  const { option, note } = buildOption({ kind, csvPath, series });
  writeFileSync(outPath, renderSvg(option), "utf8");
  return note;
}

#!/usr/bin/env node
import { KINDS, Kind, renderToFile } from "./render.js";

function usage(): never {
  console.error("usage: plots <nmse|se|map> <input.csv> <output.svg> [--series a,b,...]");
  process.exit(2);
}

const args = process.argv.slice(2);
let series: string[] | undefined;
const flagIndex = args.indexOf("--series");
if (flagIndex >= 0) {
  const value = args[flagIndex + 1];
  if (!value) usage();
  series = value.split(",").map((s) => s.trim()).filter(Boolean);
  args.splice(flagIndex, 2);
}
const [kind, csvPath, outPath] = args;
if (!kind || !csvPath || !outPath) usage();
if (!(KINDS as readonly string[]).includes(kind)) usage();

try {
  const note = renderToFile(kind as Kind, csvPath, outPath, series);
  console.log(`wrote ${outPath}${note ? ` (${note})` : ""}`);
} catch (err) {
  console.error(`error: ${(err as Error).message}`);
  process.exit(1);
}

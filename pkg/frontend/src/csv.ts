import { readFileSync } from "fs";
import Papa from "papaparse";

export class SchemaError extends Error {}

export type Row = Record<string, string | number | null>;

/** Parse a harness CSV: an optional leading `# ...` comment, then a header
 *  row. Values are numeric where possible, empty cells become null. */
export function parseCsv(path: string): { comment: string; rows: Row[] } {
  const raw = readFileSync(path, "utf8");
  const lines = raw.split(/\r?\n/);
  let comment = "";
  let body = raw;
  if (lines[0]?.startsWith("#")) {
    comment = lines[0];
    body = lines.slice(1).join("\n");
  }
  const parsed = Papa.parse<Row>(body.trim(), {
    header: true,
    dynamicTyping: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    throw new SchemaError(`CSV parse failed: ${parsed.errors[0].message}`);
  }
  const rows = parsed.data.map((row) => {
    const out: Row = {};
    for (const [key, value] of Object.entries(row)) {
      out[key] = value === "" || value === undefined ? null : (value as string | number);
    }
    return out;
  });
  if (rows.length === 0) {
    throw new SchemaError("CSV has no data rows");
  }
  return { comment, rows };
}

export function requireColumns(rows: Row[], columns: string[], kind: string): void {
  const present = new Set(Object.keys(rows[0] ?? {}));
  for (const column of columns) {
    if (!present.has(column)) {
      throw new SchemaError(`${kind} CSV is missing required column '${column}'`);
    }
  }
}

export function asNumber(value: string | number | null, column: string): number {
  if (typeof value !== "number" || Number.isNaN(value)) {
    throw new SchemaError(`expected a number in column '${column}', got '${value}'`);
  }
  return value;
}

/**
 * Artifact tables: numeric CSVs with a `# generated <stamp>` comment
 * line, a header row, and an optional JSON sidecar carrying units.
 * This module only reads; it never recomputes anything.
 */
import { readFileSync } from "fs";
import path from "path";
import Papa from "papaparse";

export interface Table {
  name: string;
  columns: string[];
  rows: number[][];
}

/** Missing file, missing columns, or an empty grid. */
export class SchemaError extends Error {
  constructor(
    message: string,
    readonly expected: string[] = [],
    readonly found: string[] = [],
  ) {
    super(message);
    this.name = "SchemaError";
  }
}

function describe(cols: string[]): string {
  return cols.length ? cols.join(", ") : "(none)";
}

/** Parse one artifact CSV and check the required columns are present. */
export function parseTable(
  name: string,
  text: string,
  required: string[],
): Table {
  const parsed = Papa.parse<string[]>(text.trim(), {
    comments: "#",
    skipEmptyLines: true,
  });
  // delimiter auto-detection "errors" are advisory (e.g. comments-only file)
  const fatal = parsed.errors.filter((e) => e.type !== "Delimiter");
  if (fatal.length > 0) {
    throw new SchemaError(`${name}: unparsable CSV (${fatal[0]!.message})`);
  }
  const grid = parsed.data;
  if (grid.length === 0) {
    throw new SchemaError(
      `${name}: empty grid, expected columns ${describe(required)}`,
      required,
      [],
    );
  }
  const columns = grid[0]!.map((c) => c.trim());
  const missing = required.filter((c) => !columns.includes(c));
  if (missing.length > 0) {
    throw new SchemaError(
      `${name}: missing column(s) ${describe(missing)}; ` +
        `expected ${describe(required)}, found ${describe(columns)}`,
      required,
      columns,
    );
  }
  if (grid.length === 1) {
    throw new SchemaError(
      `${name}: empty grid (header only), expected columns ${describe(required)}`,
      required,
      columns,
    );
  }
  const rows = grid.slice(1).map((cells, i) => {
    const vals = cells.map(Number);
    if (vals.some((v) => Number.isNaN(v))) {
      throw new SchemaError(`${name}: non-numeric value in data row ${i + 1}`);
    }
    return vals;
  });
  return { name, columns, rows };
}

/** Load `<name>.csv` from an artifact directory. */
export function loadTable(
  dir: string,
  name: string,
  required: string[],
): Table {
  const file = path.join(dir, `${name}.csv`);
  let text: string;
  try {
    text = readFileSync(file, "utf-8");
  } catch {
    throw new SchemaError(
      `${file}: cannot read table, expected columns ${describe(required)}`,
      required,
      [],
    );
  }
  return parseTable(name, text, required);
}

/** One column as a plain array. */
export function column(table: Table, name: string): number[] {
  const i = table.columns.indexOf(name);
  if (i < 0) {
    throw new SchemaError(
      `${table.name}: no column ${name}; found ${describe(table.columns)}`,
      [name],
      table.columns,
    );
  }
  return table.rows.map((r) => r[i]!);
}

/** Rows where `where` holds (it sees every column), narrowed to `names`. */
export function select(
  table: Table,
  names: string[],
  where?: (row: Record<string, number>) => boolean,
): Record<string, number>[] {
  const idx = names.map((n) => {
    const i = table.columns.indexOf(n);
    if (i < 0) {
      throw new SchemaError(
        `${table.name}: no column ${n}; found ${describe(table.columns)}`,
        names,
        table.columns,
      );
    }
    return i;
  });
  const out: Record<string, number>[] = [];
  for (const row of table.rows) {
    const full: Record<string, number> = {};
    table.columns.forEach((c, j) => (full[c] = row[j]!));
    if (!where || where(full)) {
      const rec: Record<string, number> = {};
      names.forEach((n, j) => (rec[n] = row[idx[j]!]!));
      out.push(rec);
    }
  }
  return out;
}

export function uniqueSorted(values: number[]): number[] {
  return [...new Set(values)].sort((a, b) => a - b);
}

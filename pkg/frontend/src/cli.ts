/**
 * Command line entry: render one figure recipe from an artifact directory.
 *
 *   plotkit <figure-id> <artifact-dir> [--out <dir>]
 *
 * Writes the recipe's SVG files (default: alongside the artifacts) and
 * prints each written path. Exits 1 on usage or schema problems.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { SchemaError } from "./csv.js";
import { RECIPES, renderFigure } from "./recipes.js";

export function main(argv: string[]): number {
  const args: string[] = [];
  let out: string | undefined;
  for (let i = 0; i < argv.length; i++) {
    const a = argv[i]!;
    if (a === "--out") {
      out = argv[++i];
      if (out === undefined) {
        process.stderr.write("error: --out needs a directory\n");
        return 1;
      }
    } else if (a === "--help" || a === "-h") {
      process.stdout.write(usage());
      return 0;
    } else {
      args.push(a);
    }
  }
  if (args.length !== 2) {
    process.stderr.write(usage());
    return 1;
  }
  const [id, dir] = args as [string, string];

  let figures;
  try {
    figures = renderFigure(id, dir);
  } catch (err) {
    if (err instanceof SchemaError || err instanceof Error) {
      process.stderr.write(`error: ${err.message}\n`);
      return 1;
    }
    throw err;
  }

  const outDir = out ?? dir;
  fs.mkdirSync(outDir, { recursive: true });
  for (const fig of figures) {
    const target = path.join(outDir, fig.name);
    fs.writeFileSync(target, fig.svg);
    process.stdout.write(target + "\n");
  }
  return 0;
}

function usage(): string {
  return (
    "usage: plotkit <figure-id> <artifact-dir> [--out <dir>]\n" +
    `figure ids: ${Object.keys(RECIPES).join(", ")}\n`
  );
}

// Only run when invoked as a script, not when imported by tests.
const invoked = process.argv[1] ?? "";
if (/cli\.(ts|js)$/.test(invoked)) {
  process.exit(main(process.argv.slice(2)));
}

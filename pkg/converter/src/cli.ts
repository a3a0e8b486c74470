#!/usr/bin/env node
/**
 * Usage: xio-convert <archive.npz> <outdir> --mapping <mapping.json>
 */
import { convert, loadMapping } from "./convert";

function main(argv: string[]): number {
  const positional: string[] = [];
  let mappingPath: string | undefined;
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--mapping") {
      mappingPath = argv[++i];
    } else if (argv[i] === "--help" || argv[i] === "-h") {
      console.log("usage: xio-convert <archive.npz> <outdir> --mapping <mapping.json>");
      return 0;
    } else {
      positional.push(argv[i]);
    }
  }
  if (positional.length !== 2 || !mappingPath) {
    console.error("usage: xio-convert <archive.npz> <outdir> --mapping <mapping.json>");
    return 2;
  }
  const [archive, outDir] = positional;
  try {
    const results = convert(archive, outDir, loadMapping(mappingPath));
    for (const r of results) {
      if (r.status === "ok") {
        console.log(`${r.id}: ${r.rows} rows, ${r.durationS.toFixed(2)} s -> ${r.file}`);
      } else {
        console.log(`${r.id}: skipped (${r.reason})`);
      }
    }
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

process.exitCode = main(process.argv.slice(2));

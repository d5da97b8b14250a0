/**
 * Command line entry point:
 *
 *   panges-adapter --role generator --backend mock [--erosion 1]
 *                  [--category 1] [--device cpu]
 *
 * The engine launches this as a child process and talks line-delimited JSON
 * on the standard streams; see adapter.ts for the protocol itself.
 */

import { serve, type AdapterConfig } from "./adapter.js";
import { parseConfig } from "./cli.js";

async function main(): Promise<void> {
  let cfg: AdapterConfig;
  try {
    cfg = parseConfig(process.argv.slice(2));
  } catch (err) {
    process.stderr.write(`${err instanceof Error ? err.message : err}\n`);
    process.exitCode = 2;
    return;
  }
  process.exitCode = await serve(cfg, process.stdin, process.stdout);
}

main().catch((err) => {
  process.stderr.write(`[panges-adapter] fatal: ${err}\n`);
  process.exit(1);
});

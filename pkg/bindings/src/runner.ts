/** Subprocess plumbing: every operation goes through the pipeline CLI. */

import { spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

export interface RunnerOptions {
  /** Python interpreter with the pipeline installed (default "python3"). */
  python?: string;
  /** Keep scratch directories for debugging instead of deleting them. */
  keepScratch?: boolean;
}

export class PipelineError extends Error {
  constructor(
    message: string,
    public readonly exitCode: number | null,
    public readonly stderr: string,
  ) {
    super(message);
  }
}

export function runCli(args: string[], opts: RunnerOptions = {}): string {
  const python = opts.python ?? process.env.PSEUDOSCAN_PYTHON ?? "python3";
  const res = spawnSync(python, ["-m", "pseudoscan", ...args], {
    encoding: "utf8",
    maxBuffer: 1 << 26,
  });
  if (res.error) {
    throw new PipelineError(`failed to launch ${python}: ${res.error.message}`, null, "");
  }
  if (res.status !== 0) {
    // carry the primary error name through (e.g. "error: AllFramesEmpty ...")
    throw new PipelineError(
      `pseudoscan ${args[0]} exited ${res.status}: ${res.stderr.trim() || res.stdout.trim()}`,
      res.status,
      res.stderr,
    );
  }
  return res.stdout;
}

export function makeScratch(tag: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), `pseudoscan-${tag}-`));
}

export function cleanupScratch(dir: string, opts: RunnerOptions = {}): void {
  if (!opts.keepScratch) {
    fs.rmSync(dir, { recursive: true, force: true });
  }
}

import { spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { loadLabels, loadPointBin } from "../src/formats";
import type { BoxRecord, FrameBuffer } from "../src/types";

export const REPO_ROOT = path.resolve(__dirname, "..", "..", "..");
export const PYTHON = process.env.PSEUDOSCAN_PYTHON ?? "python3";

export interface ToyDataset {
  root: string;
  manifest: string;
  labelsDir: string;
  cadLibrary: string;
  sensorsFile: string;
  frameIds: string[];
}

export function runPython(args: string[], check = true) {
  const res = spawnSync(PYTHON, args, { encoding: "utf8", maxBuffer: 1 << 26 });
  if (check && res.status !== 0) {
    throw new Error(`python ${args.join(" ")} failed (${res.status}): ${res.stderr}`);
  }
  return res;
}

export function makeToyDataset(frames = 3, seed = 5): ToyDataset {
  const root = fs.mkdtempSync(path.join(os.tmpdir(), "pseudoscan-ts-fixture-"));
  runPython([
    path.join(REPO_ROOT, "scripts", "make_toy_dataset.py"),
    root,
    "--frames", String(frames),
    "--boxes", "2",
    "--seed", String(seed),
  ]);
  const manifest = path.join(root, "manifest.json");
  const ids = (JSON.parse(fs.readFileSync(manifest, "utf8")).frames as { id: string }[]).map(
    (e) => e.id,
  );
  return {
    root,
    manifest,
    labelsDir: path.join(root, "labels"),
    cadLibrary: path.join(root, "cad_library"),
    sensorsFile: path.join(root, "sensors.json"),
    frameIds: ids,
  };
}

export function loadDatasetBuffers(ds: ToyDataset): {
  frames: FrameBuffer[];
  boxes: Map<string, BoxRecord[]>;
} {
  const frames = ds.frameIds.map((id) =>
    loadPointBin(path.join(ds.root, "frames", `${id}.bin`), id),
  );
  const boxes = new Map(
    ds.frameIds.map((id) => [id, loadLabels(path.join(ds.labelsDir, `${id}.txt`))]),
  );
  return { frames, boxes };
}

export function runCliDirect(args: string[]) {
  return runPython(["-m", "pseudoscan", ...args]);
}

export function tempDir(tag: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), `pseudoscan-ts-${tag}-`));
}

/** Bindings for ML data loaders: run the pipeline in a subprocess, move
 * point clouds and box records across as typed buffers.
 *
 * Nothing is re-implemented here; rcPpcg/cfPpcg/ptsnSearch stage their
 * inputs into a scratch directory, drive the CLI, and parse the artifacts
 * back out. Same seeds give byte-identical outputs to direct CLI runs.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import {
  labelsToText,
  loadLabels,
  loadPointBin,
  loadSidecar,
  parseCurveCsv,
  pointBinToBuffer,
  writeReplay,
  type ReplayRecord,
} from "./formats";
import { cleanupScratch, makeScratch, runCli, type RunnerOptions } from "./runner";
import type {
  BoxRecord,
  DetectorCallback,
  FrameBuffer,
  PtsnResult,
  SidecarRecord,
} from "./types";

export * from "./types";
export * from "./formats";
export { PipelineError, type RunnerOptions } from "./runner";

export interface PpcgOptions extends RunnerOptions {
  libraryDir: string;
  kind?: "CAD" | "POINT";
  sensor: string;
  sensorsFile?: string;
  seed?: number;
  gate?: number;
  /** CF relocation planar-distance range, meters. */
  range?: [number, number];
  minPoints?: number;
  /** Persist artifacts here instead of a scratch directory. */
  out?: string;
}

export interface RcResult {
  frames: FrameBuffer[];
  boxes: Map<string, BoxRecord[]>;
  sidecars: Map<string, SidecarRecord[]>;
}

export interface CfSample {
  id: string;
  frameId: string;
  boxIndex: number;
  points: FrameBuffer;
  box: BoxRecord;
}

export interface CfResult {
  samples: CfSample[];
  sidecars: Map<string, SidecarRecord[]>;
}

interface StagedInputs {
  dir: string;
  manifestPath: string;
  labelsDir: string;
}

function stageInputs(
  frames: FrameBuffer[],
  boxes: Map<string, BoxRecord[]>,
  dir: string,
): StagedInputs {
  const framesDir = path.join(dir, "frames");
  const labelsDir = path.join(dir, "labels");
  fs.mkdirSync(framesDir, { recursive: true });
  fs.mkdirSync(labelsDir, { recursive: true });
  const entries = frames.map((f) => {
    fs.writeFileSync(path.join(framesDir, `${f.id}.bin`), pointBinToBuffer(f));
    const frameBoxes = boxes.get(f.id) ?? [];
    fs.writeFileSync(path.join(labelsDir, `${f.id}.txt`), labelsToText(frameBoxes));
    return { id: f.id, path: `frames/${f.id}.bin`, sensor_id: "" };
  });
  const manifestPath = path.join(dir, "manifest.json");
  fs.writeFileSync(manifestPath, JSON.stringify({ split: "bindings", frames: entries }));
  return { dir, manifestPath, labelsDir };
}

function ppcgArgs(staged: StagedInputs, outDir: string, opts: PpcgOptions): string[] {
  const args = [
    "--manifest", staged.manifestPath,
    "--labels", staged.labelsDir,
    "--library", opts.libraryDir,
    "--kind", opts.kind ?? "CAD",
    "--sensor", opts.sensor,
    "--out", outDir,
    "--seed", String(opts.seed ?? 0),
  ];
  if (opts.sensorsFile) args.push("--sensors", opts.sensorsFile);
  if (opts.gate !== undefined) args.push("--gate", String(opts.gate));
  if (opts.range) args.push("--range", `${opts.range[0]},${opts.range[1]}`);
  if (opts.minPoints !== undefined) args.push("--min-points", String(opts.minPoints));
  return args;
}

/** Replace sparse boxes' interiors with ray-constrained pseudo points. */
export function rcPpcg(
  frames: FrameBuffer[],
  boxes: Map<string, BoxRecord[]>,
  opts: PpcgOptions,
): RcResult {
  const scratch = makeScratch("rc");
  try {
    const staged = stageInputs(frames, boxes, path.join(scratch, "in"));
    const outDir = opts.out ?? path.join(scratch, "out");
    runCli(["rc", ...ppcgArgs(staged, outDir, opts)], opts);
    const outFrames: FrameBuffer[] = [];
    const outBoxes = new Map<string, BoxRecord[]>();
    const sidecars = new Map<string, SidecarRecord[]>();
    for (const f of frames) {
      outFrames.push(loadPointBin(path.join(outDir, `${f.id}.bin`), f.id));
      outBoxes.set(f.id, loadLabels(path.join(outDir, `${f.id}.txt`)));
      sidecars.set(f.id, loadSidecar(path.join(outDir, `${f.id}.sidecar.json`)));
    }
    return { frames: outFrames, boxes: outBoxes, sidecars };
  } finally {
    cleanupScratch(scratch, opts);
  }
}

/** Generate constraint-free far-range samples, one per box. */
export function cfPpcg(
  frames: FrameBuffer[],
  boxes: Map<string, BoxRecord[]>,
  opts: PpcgOptions,
): CfResult {
  const scratch = makeScratch("cf");
  try {
    const staged = stageInputs(frames, boxes, path.join(scratch, "in"));
    const outDir = opts.out ?? path.join(scratch, "out");
    runCli(["cf", ...ppcgArgs(staged, outDir, opts)], opts);
    const samples: CfSample[] = [];
    const sidecars = new Map<string, SidecarRecord[]>();
    for (const f of frames) {
      sidecars.set(f.id, loadSidecar(path.join(outDir, `${f.id}.sidecar.json`)));
      const frameBoxes = boxes.get(f.id) ?? [];
      for (let k = 0; k < frameBoxes.length; k++) {
        const id = `${f.id}__cf${k}`;
        const bin = path.join(outDir, `${id}.bin`);
        if (!fs.existsSync(bin)) continue; // sparse scans emit nothing
        samples.push({
          id,
          frameId: f.id,
          boxIndex: k,
          points: loadPointBin(bin, id),
          box: loadLabels(path.join(outDir, `${id}.txt`))[0],
        });
      }
    }
    return { samples, sidecars };
  } finally {
    cleanupScratch(scratch, opts);
  }
}

export interface PtsnOptions extends RunnerOptions {
  estMean: [number, number, number];
  /** start:stop:step, e.g. [0.8, 1.4, 0.01]. */
  grid?: [number, number, number];
  metric?: "dims" | "volume";
  confidenceFloor?: number;
  seed?: number;
  out?: string;
}

function gridScales(grid: [number, number, number]): number[] {
  const [start, stop, step] = grid;
  const out: number[] = [];
  for (let i = 0; ; i++) {
    const s = Math.round((start + i * step) * 1e10) / 1e10;
    if (s > stop + step / 2) break;
    out.push(s);
  }
  return out;
}

function runPtsnCli(
  staged: StagedInputs,
  outDir: string,
  detectorArgs: string[],
  opts: PtsnOptions,
): PtsnResult {
  const grid = opts.grid ?? [0.8, 1.4, 0.01];
  const args = [
    "ptsn",
    "--manifest", staged.manifestPath,
    ...detectorArgs,
    "--est-mean", opts.estMean.join(","),
    "--grid", `${grid[0]}:${grid[1]}:${grid[2]}`,
    "--metric", opts.metric ?? "dims",
    "--out", outDir,
    "--seed", String(opts.seed ?? 0),
  ];
  if (opts.confidenceFloor !== undefined) {
    args.push("--confidence-floor", String(opts.confidenceFloor));
  }
  runCli(args, opts);
  const scale = JSON.parse(fs.readFileSync(path.join(outDir, "scale.json"), "utf8")).scale;
  return { scale, curve: parseCurveCsv(path.join(outDir, "curve.csv")) };
}

/** Scale search driven by a recorded replay file. */
export function ptsnSearchReplay(
  frames: FrameBuffer[],
  replayPath: string,
  opts: PtsnOptions,
): PtsnResult {
  const scratch = makeScratch("ptsn");
  try {
    const staged = stageInputs(frames, new Map(), path.join(scratch, "in"));
    const outDir = opts.out ?? path.join(scratch, "out");
    return runPtsnCli(staged, outDir, ["--detector", "replay", "--replay", replayPath], opts);
  } finally {
    cleanupScratch(scratch, opts);
  }
}

/** Scale the packed cloud's x,y,z by s (intensity untouched). */
export function scalePoints(data: Float32Array, s: number): Float32Array {
  const out = new Float32Array(data.length);
  for (let i = 0; i < data.length; i += 4) {
    out[i] = Math.fround(data[i] * s);
    out[i + 1] = Math.fround(data[i + 1] * s);
    out[i + 2] = Math.fround(data[i + 2] * s);
    out[i + 3] = data[i + 3];
  }
  return out;
}

/**
 * Scale search driven by a live detector callback.
 *
 * The callback is invoked once per (frame, grid scale) with the scaled cloud
 * and must return boxes in the scaled coordinate system. Calls run serially
 * on this thread; the recorded detections are materialized as a replay file
 * and the search itself runs in the pipeline, so a callback that replays a
 * recording reproduces the replay-driven result exactly.
 */
export function ptsnSearchCallback(
  frames: FrameBuffer[],
  detector: DetectorCallback,
  opts: PtsnOptions,
): PtsnResult {
  const scratch = makeScratch("ptsn-cb");
  try {
    const records: ReplayRecord[] = [];
    for (const frame of frames) {
      for (const s of gridScales(opts.grid ?? [0.8, 1.4, 0.01])) {
        const boxes = detector(frame.id, s, scalePoints(frame.data, s));
        records.push({ frame_id: frame.id, scale: s, boxes });
      }
    }
    const replayPath = path.join(scratch, "callback-replay.jsonl");
    writeReplay(records, replayPath);
    return ptsnSearchReplay(frames, replayPath, { ...opts, out: opts.out });
  } finally {
    cleanupScratch(scratch, opts);
  }
}

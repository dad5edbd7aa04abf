import assert from "node:assert/strict";
import * as fs from "node:fs";
import * as path from "node:path";
import { test } from "node:test";

import { readReplay, writeReplay, type ReplayRecord } from "../src/formats";
import {
  cfPpcg,
  ptsnSearchCallback,
  ptsnSearchReplay,
  rcPpcg,
  type BoxRecord,
} from "../src/index";
import { loadDatasetBuffers, makeToyDataset, runCliDirect, tempDir } from "./helpers";

const SEED = 0;
const ds = makeToyDataset(3, 5);
const { frames, boxes } = loadDatasetBuffers(ds);

function ppcgOpts(out?: string) {
  return {
    libraryDir: ds.cadLibrary,
    kind: "CAD" as const,
    sensor: "toy",
    sensorsFile: ds.sensorsFile,
    seed: SEED,
    range: [20, 35] as [number, number],
    minPoints: 1,
    out,
  };
}

function runReferencePpcg(mode: "rc" | "cf"): string {
  const out = tempDir(`ref-${mode}`);
  runCliDirect([
    mode,
    "--manifest", ds.manifest,
    "--labels", ds.labelsDir,
    "--library", ds.cadLibrary,
    "--kind", "CAD",
    "--sensor", "toy",
    "--sensors", ds.sensorsFile,
    "--out", out,
    "--seed", String(SEED),
    "--range", "20,35",
    "--min-points", "1",
  ]);
  return out;
}

test("rcPpcg reproduces direct CLI output bit-exactly", () => {
  const ref = runReferencePpcg("rc");
  const mine = tempDir("bind-rc");
  const result = rcPpcg(frames, boxes, ppcgOpts(mine));

  for (const id of ds.frameIds) {
    const refBin = fs.readFileSync(path.join(ref, `${id}.bin`));
    const mineBin = fs.readFileSync(path.join(mine, `${id}.bin`));
    assert.deepEqual(mineBin, refBin, `${id}.bin differs`);
    assert.equal(
      fs.readFileSync(path.join(mine, `${id}.txt`), "utf8"),
      fs.readFileSync(path.join(ref, `${id}.txt`), "utf8"),
      `${id}.txt differs`,
    );
    assert.deepEqual(
      JSON.parse(fs.readFileSync(path.join(mine, `${id}.sidecar.json`), "utf8")),
      JSON.parse(fs.readFileSync(path.join(ref, `${id}.sidecar.json`), "utf8")),
    );
  }
  // parsed views are consistent with the artifacts
  for (const f of result.frames) {
    const refBin = fs.readFileSync(path.join(ref, `${f.id}.bin`));
    assert.equal(f.count * 16, refBin.byteLength);
  }
});

test("rcPpcg with no gated boxes returns input values unchanged", () => {
  // gate=1: every box has >= 1 interior point, so nothing is replaced
  const result = rcPpcg(frames, boxes, { ...ppcgOpts(), gate: 1 });
  for (let i = 0; i < frames.length; i++) {
    assert.deepEqual(result.frames[i].data, frames[i].data);
  }
});

test("cfPpcg reproduces direct CLI output bit-exactly", () => {
  const ref = runReferencePpcg("cf");
  const mine = tempDir("bind-cf");
  const result = cfPpcg(frames, boxes, ppcgOpts(mine));

  const refBins = fs.readdirSync(ref).filter((f) => f.endsWith(".bin")).sort();
  const mineBins = fs.readdirSync(mine).filter((f) => f.endsWith(".bin")).sort();
  assert.deepEqual(mineBins, refBins);
  assert.ok(refBins.length > 0);
  for (const name of refBins) {
    assert.deepEqual(
      fs.readFileSync(path.join(mine, name)),
      fs.readFileSync(path.join(ref, name)),
      `${name} differs`,
    );
  }
  assert.equal(result.samples.length, refBins.length);
  for (const s of result.samples) {
    assert.ok(s.points.count > 0);
    assert.ok(s.box.l > 0);
  }
});

function constantReplay(): ReplayRecord[] {
  const records: ReplayRecord[] = [];
  const grid: number[] = [];
  for (let s = 1.0; s <= 1.3 + 1e-9; s += 0.05) grid.push(Math.round(s * 100) / 100);
  for (const f of frames) {
    for (const s of grid) {
      const box: BoxRecord = { x: 5, y: 0, z: 0.8, l: 4.66, w: 2.08, h: 1.73, heading: 0.2, conf: 0.9 };
      records.push({ frame_id: f.id, scale: s, boxes: [box] });
    }
  }
  return records;
}

test("ptsnSearchReplay matches a direct CLI run", () => {
  const replayPath = path.join(tempDir("replay"), "r.jsonl");
  writeReplay(constantReplay(), replayPath);

  const refOut = tempDir("ref-ptsn");
  runCliDirect([
    "ptsn",
    "--manifest", ds.manifest,
    "--detector", "replay",
    "--replay", replayPath,
    "--est-mean", "3.89,1.62,1.53",
    "--grid", "1.0:1.3:0.05",
    "--out", refOut,
  ]);
  const refScale = JSON.parse(fs.readFileSync(path.join(refOut, "scale.json"), "utf8")).scale;
  const refCurve = fs.readFileSync(path.join(refOut, "curve.csv"), "utf8");

  const mineOut = tempDir("bind-ptsn");
  const result = ptsnSearchReplay(frames, replayPath, {
    estMean: [3.89, 1.62, 1.53],
    grid: [1.0, 1.3, 0.05],
    out: mineOut,
  });
  assert.equal(result.scale, refScale);
  assert.equal(fs.readFileSync(path.join(mineOut, "curve.csv"), "utf8"), refCurve);
  assert.equal(result.curve.length, 7);
  assert.equal(result.scale, 1.2); // constant 4.66x2.08x1.73 vs KITTI mean
});

test("callback-driven search equals replay-driven search on the same detections", () => {
  const replayPath = path.join(tempDir("replay-cb"), "r.jsonl");
  writeReplay(constantReplay(), replayPath);
  const table = new Map<string, BoxRecord[]>();
  for (const r of readReplay(replayPath)) {
    table.set(`${r.frame_id}@${r.scale.toFixed(4)}`, r.boxes);
  }

  const viaReplay = ptsnSearchReplay(frames, replayPath, {
    estMean: [3.89, 1.62, 1.53],
    grid: [1.0, 1.3, 0.05],
  });
  const calls: string[] = [];
  const viaCallback = ptsnSearchCallback(
    frames,
    (frameId, scale, pts) => {
      calls.push(`${frameId}@${scale}`);
      assert.equal(pts.length % 4, 0);
      return table.get(`${frameId}@${scale.toFixed(4)}`) ?? [];
    },
    { estMean: [3.89, 1.62, 1.53], grid: [1.0, 1.3, 0.05] },
  );
  assert.equal(calls.length, frames.length * 7);
  assert.equal(viaCallback.scale, viaReplay.scale);
  assert.deepEqual(viaCallback.curve, viaReplay.curve);
});

test("pipeline errors surface with the primary error text", () => {
  assert.throws(
    () => ptsnSearchReplay(frames, "/nonexistent/replay.jsonl", { estMean: [3.89, 1.62, 1.53] }),
    /exited 2/,
  );
});

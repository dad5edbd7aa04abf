/** Readers and writers for the pipeline's on-disk formats.
 *
 * Buffers are copied out of Node's pooled allocations before reinterpreting
 * as Float32Array: a Buffer's backing ArrayBuffer is a shared slab whose
 * byteOffset is rarely zero, and float views also need 4-byte alignment.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import type { BoxRecord, CurveRow, FrameBuffer, SensorSpec, SidecarRecord } from "./types";

const RECORD_FLOATS = 4;

function toAlignedFloat32(buf: Buffer): Float32Array {
  if (buf.byteLength % 4 !== 0) {
    throw new Error(`binary size ${buf.byteLength} is not float32-aligned`);
  }
  const copy = new ArrayBuffer(buf.byteLength);
  new Uint8Array(copy).set(buf);
  return new Float32Array(copy);
}

export function pointBinFromBuffer(id: string, buf: Buffer): FrameBuffer {
  if (buf.byteLength % (4 * RECORD_FLOATS) !== 0) {
    throw new Error(`${id}: ${buf.byteLength} bytes is not a whole number of point records`);
  }
  const data = toAlignedFloat32(buf);
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) {
      throw new Error(`${id}: non-finite value in record ${Math.floor(i / RECORD_FLOATS)}`);
    }
  }
  return { id, data, count: data.length / RECORD_FLOATS };
}

export function loadPointBin(file: string, id?: string): FrameBuffer {
  const frameId = id ?? path.basename(file).replace(/\.bin$/, "");
  return pointBinFromBuffer(frameId, fs.readFileSync(file));
}

export function pointBinToBuffer(frame: FrameBuffer): Buffer {
  // fresh copy: callers may keep mutating their view
  return Buffer.from(new Uint8Array(frame.data.buffer, frame.data.byteOffset, frame.data.byteLength).slice());
}

export function writePointBin(frame: FrameBuffer, file: string): void {
  fs.writeFileSync(file, pointBinToBuffer(frame));
}

/** Fixed 6-decimal rendering matching the pipeline's label writer. */
export function fixed6(v: number): string {
  const s = v.toFixed(6);
  // JS renders -0 as "0.000000"; the label writer keeps the sign
  if (Object.is(v, -0) || (v < 0 && s[0] !== "-")) {
    return "-" + s;
  }
  return s;
}

export function loadLabels(file: string): BoxRecord[] {
  const out: BoxRecord[] = [];
  const lines = fs.readFileSync(file, "utf8").split("\n");
  for (let n = 0; n < lines.length; n++) {
    const body = lines[n].split("#", 1)[0].trim();
    if (!body) continue;
    const parts = body.split(/\s+/).map(Number);
    if ((parts.length !== 7 && parts.length !== 8) || parts.some((v) => !Number.isFinite(v))) {
      throw new Error(`${file}:${n + 1}: expected 7 or 8 numeric fields`);
    }
    const [x, y, z, l, w, h, heading] = parts;
    out.push({ x, y, z, l, w, h, heading, conf: parts.length === 8 ? parts[7] : 1.0 });
  }
  return out;
}

export function labelsToText(boxes: BoxRecord[], withConf = true): string {
  const lines = boxes.map((b) => {
    const fields = [b.x, b.y, b.z, b.l, b.w, b.h, b.heading];
    if (withConf) fields.push(b.conf);
    return fields.map(fixed6).join(" ");
  });
  return lines.length ? lines.join("\n") + "\n" : "";
}

export function writeLabels(boxes: BoxRecord[], file: string, withConf = true): void {
  fs.writeFileSync(file, labelsToText(boxes, withConf));
}

export interface PlyCloud {
  points: Float32Array; // packed x,y,z triples
  intensity: Float32Array | null;
  count: number;
}

export function readPly(file: string): PlyCloud {
  const raw = fs.readFileSync(file);
  const marker = Buffer.from("end_header\n");
  const end = raw.indexOf(marker);
  if (!raw.subarray(0, 3).equals(Buffer.from("ply")) || end < 0) {
    throw new Error(`${file}: not a PLY file`);
  }
  const header = raw.subarray(0, end).toString("ascii").split("\n");
  if (!header.some((l) => l.trim() === "format binary_little_endian 1.0")) {
    throw new Error(`${file}: expected binary_little_endian 1.0`);
  }
  let count = -1;
  const props: string[] = [];
  let inVertex = false;
  for (const line of header) {
    const parts = line.trim().split(/\s+/);
    if (parts[0] === "element") {
      inVertex = parts[1] === "vertex";
      if (inVertex) count = parseInt(parts[2], 10);
    } else if (parts[0] === "property" && inVertex) {
      if (parts[1] !== "float" && parts[1] !== "float32") {
        throw new Error(`${file}: unsupported vertex property type ${parts[1]}`);
      }
      props.push(parts[2]);
    }
  }
  if (count < 0) throw new Error(`${file}: no vertex element`);
  const body = raw.subarray(end + marker.length, end + marker.length + count * 4 * props.length);
  const data = toAlignedFloat32(Buffer.from(body));
  const col = (name: string) => props.indexOf(name);
  for (const ax of ["x", "y", "z"]) {
    if (col(ax) < 0) throw new Error(`${file}: vertex element lacks ${ax}`);
  }
  const points = new Float32Array(count * 3);
  const hasIntensity = col("intensity") >= 0;
  const intensity = hasIntensity ? new Float32Array(count) : null;
  const stride = props.length;
  for (let i = 0; i < count; i++) {
    points[3 * i] = data[i * stride + col("x")];
    points[3 * i + 1] = data[i * stride + col("y")];
    points[3 * i + 2] = data[i * stride + col("z")];
    if (intensity) intensity[i] = data[i * stride + col("intensity")];
  }
  return { points, intensity, count };
}

export function loadSensorLibrary(file: string): SensorSpec[] {
  const doc = JSON.parse(fs.readFileSync(file, "utf8"));
  if (!Array.isArray(doc)) throw new Error(`${file}: expected a JSON array of sensors`);
  return doc as SensorSpec[];
}

export function loadSidecar(file: string): SidecarRecord[] {
  return JSON.parse(fs.readFileSync(file, "utf8")) as SidecarRecord[];
}

export function parseCurveCsv(file: string): CurveRow[] {
  const lines = fs.readFileSync(file, "utf8").trim().split("\n");
  const header = lines[0].split(",");
  const expected = ["s", "l", "w", "h", "volume", "frames_used"];
  if (header.join(",") !== expected.join(",")) {
    throw new Error(`${file}: unexpected curve header ${lines[0]}`);
  }
  return lines.slice(1).map((line) => {
    const [s, l, w, h, volume, framesUsed] = line.split(",").map(Number);
    return { s, l, w, h, volume, frames_used: framesUsed };
  });
}

export interface ReplayRecord {
  frame_id: string;
  scale: number;
  boxes: BoxRecord[];
}

export function writeReplay(records: ReplayRecord[], file: string): void {
  const lines = records.map((r) =>
    JSON.stringify({
      frame_id: r.frame_id,
      scale: r.scale,
      boxes: r.boxes.map((b) => ({
        x: b.x, y: b.y, z: b.z,
        l: b.l, w: b.w, h: b.h,
        heading: b.heading, conf: b.conf,
      })),
    }),
  );
  fs.writeFileSync(file, lines.length ? lines.join("\n") + "\n" : "");
}

export function readReplay(file: string): ReplayRecord[] {
  return fs
    .readFileSync(file, "utf8")
    .split("\n")
    .filter((l) => l.trim().length > 0)
    .map((l) => JSON.parse(l) as ReplayRecord);
}

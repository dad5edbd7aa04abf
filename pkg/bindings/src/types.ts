/** Shared record shapes mirroring the pipeline's wire formats. */

/** One LiDAR frame as a packed buffer: N records of [x, y, z, intensity]. */
export interface FrameBuffer {
  id: string;
  /** Length is 4 * count; layout matches the .bin format exactly. */
  data: Float32Array;
  count: number;
}

/** Oriented 3D box plus confidence, matching the label text format. */
export interface BoxRecord {
  x: number;
  y: number;
  z: number;
  l: number;
  w: number;
  h: number;
  heading: number;
  conf: number;
}

/** Per-box generation record from the sidecar JSON. */
export interface SidecarRecord {
  box_id: number;
  source: "RC" | "CF";
  relocation_factor: number;
  dropped_ray_count: number;
  point_count: number;
  flags: string[];
}

export interface SensorSpec {
  name: string;
  beams: number;
  elevation_min_deg: number;
  elevation_max_deg: number;
  points_per_beam: number;
  origin_xyz_m: [number, number, number];
}

export interface CurveRow {
  s: number;
  l: number;
  w: number;
  h: number;
  volume: number;
  frames_used: number;
}

export interface PtsnResult {
  scale: number;
  curve: CurveRow[];
}

/**
 * Detector callback: receives the frame id, the scale already applied to the
 * points, and the scaled cloud (packed x,y,z,intensity), and returns boxes in
 * the scaled coordinate system. Runs on the caller's thread.
 */
export type DetectorCallback = (
  frameId: string,
  scale: number,
  scaledPoints: Float32Array,
) => BoxRecord[];

"""Pseudo point cloud generation for pseudo bounding boxes.

Two flavors:

* ray-constrained (RC): re-scan the fitted model along the exact rays of the
  original points inside the box, and splice the results in as replacements.
* constraint-free (CF): relocate the box to far range along its sensor
  direction, run a full simulated sweep over it, and map the hits back by
  dividing X and Y by the relocation factor. CF output rides alongside the
  frame as separate training samples; the frame itself is untouched.
"""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass

import numpy as np

from .geom import Box3D, Ray, as_point, as_points, points_in_box, wrap_angle
from .io import Frame
from .models import (
    LibraryKind,
    ModelLibrary,
    PosedModel,
    align_model_to_box,
    observation_angle,
    select_best_cad,
    select_best_point_model,
)
from .sensor import SensorSpec, angular_threshold, generate_scan_rays


@dataclass(frozen=True)
class PseudoPointSet:
    points: np.ndarray          # (N, 3), inside the box (within 1e-6)
    source: str                 # "RC" | "CF"
    box_id: int
    relocation_factor: float = 1.0
    dropped_ray_count: int = 0
    intensity: float = 0.5
    model_id: str = ""
    flags: tuple = ()

    def __len__(self) -> int:
        return len(self.points)

    def sidecar_record(self) -> dict:
        return {
            "box_id": self.box_id,
            "source": self.source,
            "relocation_factor": self.relocation_factor,
            "dropped_ray_count": self.dropped_ray_count,
            "point_count": len(self.points),
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class PpcgConfig:
    rc_max_points_gate: int = 300
    cf_relocation_distance_range: tuple[float, float] = (30.0, 60.0)
    cf_min_points: int = 5
    seed: int = 0
    cf_intensity: float = 0.5

    def __post_init__(self):
        if self.rc_max_points_gate <= 0:
            raise ValueError("rc gate must be positive")
        lo, hi = self.cf_relocation_distance_range
        if not lo < hi:
            raise ValueError("relocation range must satisfy lo < hi")
        if self.cf_min_points < 1:
            raise ValueError("cf_min_points must be >= 1")


def frame_rng(seed: int, frame_id: str, salt: int = 0) -> np.random.Generator:
    """Per-frame RNG keyed by (seed, frame id); stable across runs and
    worker orderings."""
    return np.random.default_rng([seed, zlib.crc32(frame_id.encode()), salt])


# ---------------------------------------------------------------------------
# Per-box generation
# ---------------------------------------------------------------------------


def sample_point_model(ray, posed: PosedModel, theta_th: float) -> np.ndarray | None:
    """Closest-to-sensor model point within ``theta_th`` of the ray.

    Returns the world-space point, or None when no model point falls inside
    the angular gate.
    """
    if theta_th <= 0.0:
        raise ValueError("theta_th must be positive")
    pts = posed.points_world
    rel = pts - ray.origin
    dist = np.linalg.norm(rel, axis=1)
    ok = dist > 0.0
    cosang = np.zeros(len(pts))
    cosang[ok] = (rel[ok] @ ray.direction) / dist[ok]
    ang = np.arccos(np.clip(cosang, -1.0, 1.0))
    candidates = np.nonzero(ok & (ang < theta_th))[0]
    if len(candidates) == 0:
        return None
    return pts[candidates[np.argmin(dist[candidates])]].copy()


def rc_ppcg_box(box: Box3D, raw_points, posed: PosedModel, spec: SensorSpec) -> PseudoPointSet:
    """Replace-in-kind: one pseudo point per raw ray, misses dropped.

    Mesh models take the nearest ray/surface intersection; point models take
    the smallest-depth point within the sensor's angular gate.
    """
    raw = as_points(raw_points)
    origin = spec.origin
    dropped = 0
    if len(raw) == 0:
        return PseudoPointSet(points=np.zeros((0, 3)), source="RC", box_id=-1)
    rel = raw - origin
    norms = np.linalg.norm(rel, axis=1)
    if posed.is_mesh:
        good = norms > 0.0
        dirs = np.zeros_like(rel)
        dirs[good] = rel[good] / norms[good, None]
        hit, _, pts = posed.cast_many(origin, dirs)
        hit &= good
        points = pts[hit]
        dropped = int(len(raw) - hit.sum())
    else:
        theta = angular_threshold(spec)
        out: list[np.ndarray] = []
        for i in range(len(raw)):
            if norms[i] == 0.0:
                dropped += 1
                continue
            p = sample_point_model(Ray(origin, rel[i] / norms[i]), posed, theta)
            if p is None:
                dropped += 1
            else:
                out.append(p)
        points = np.array(out) if out else np.zeros((0, 3))
    return PseudoPointSet(
        points=points,
        source="RC",
        box_id=-1,
        dropped_ray_count=dropped,
        model_id=posed.model.id,
    )


def _azimuth_window(box: Box3D, origin, margin: float) -> tuple[float, float]:
    """Arc around the box footprint as seen from the sensor, plus margin."""
    o = as_point(origin)
    center_az = math.atan2(box.y - o[1], box.x - o[0])
    corners = box.corners()
    rel_az = [
        wrap_angle(math.atan2(cy - o[1], cx - o[0]) - center_az)
        for cx, cy, _ in corners
    ]
    half = max(abs(a) for a in rel_az) + margin
    half = min(half, math.pi)
    return center_az - half, center_az + half


def _scan_posed(posed: PosedModel, spec: SensorSpec, window) -> np.ndarray:
    """Scan a posed model with the sensor pattern; returns hit points (N, 3)."""
    pattern = generate_scan_rays(spec, azimuth_window=window)
    if posed.is_mesh:
        hit, _, pts = posed.cast_many(pattern.origin, pattern.directions)
        return pts[hit]
    theta = angular_threshold(spec)
    out = []
    for d in pattern.directions:
        p = sample_point_model(Ray(pattern.origin, d), posed, theta)
        if p is not None:
            out.append(p)
    # distinct rays can gate onto the same model point; keep unique hits
    if not out:
        return np.zeros((0, 3))
    return np.unique(np.array(out), axis=0)


def cf_ppcg_box(
    box: Box3D,
    model,
    spec: SensorSpec,
    cfg: PpcgConfig,
    rng: np.random.Generator,
) -> PseudoPointSet:
    """Far-range rescan of the fitted model, mapped back into the box.

    The relocation factor s places the box's planar distance uniformly in the
    configured range (clamped to s >= 1); the relocated box keeps its z. Hits
    are mapped back by dividing X and Y by s. A too-sparse scan gets one
    retry at half the excess relocation before giving up flagged.
    """
    d0 = math.hypot(box.x, box.y)
    lo, hi = cfg.cf_relocation_distance_range
    flags: list[str] = []
    if d0 <= 1e-9:
        s = 1.0
        flags.append("cf_box_at_origin")
    else:
        target = rng.uniform(lo, hi)
        s = max(1.0, target / d0)

    theta = angular_threshold(spec)

    def attempt(s_try: float):
        moved = Box3D(
            x=s_try * box.x,
            y=s_try * box.y,
            z=box.z,
            l=box.l,
            w=box.w,
            h=box.h,
            heading=box.heading,
        )
        posed = align_model_to_box(model, moved)
        window = _azimuth_window(moved, spec.origin, 2.0 * theta)
        pts = _scan_posed(posed, spec, window)
        if len(pts):
            pts = pts.copy()
            pts[:, 0] /= s_try
            pts[:, 1] /= s_try
        return pts

    pts = attempt(s)
    if len(pts) < cfg.cf_min_points and s > 1.0:
        s = 1.0 + (s - 1.0) / 2.0
        flags.append("cf_retry_closer")
        pts = attempt(s)
    if len(pts) < cfg.cf_min_points:
        flags.append("cf_sparse")
        pts = np.zeros((0, 3))
    return PseudoPointSet(
        points=pts,
        source="CF",
        box_id=-1,
        relocation_factor=s,
        intensity=cfg.cf_intensity,
        model_id=model.id,
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# Frame-level orchestration
# ---------------------------------------------------------------------------


def _select_model(lib: ModelLibrary, box: Box3D, raw_points, spec: SensorSpec):
    if lib.kind is LibraryKind.CAD:
        return lib.by_id(select_best_cad(lib, box))
    raw_points = as_points(raw_points)
    if len(raw_points) == 0:
        # no interior points to match shape against: fall back to the
        # observation-angle gate with dims deviation as the tiebreak
        q_angle = observation_angle(box, spec.origin)
        dev = np.abs([wrap_angle(a - q_angle) for a in lib.angles])
        order = np.lexsort((np.linalg.norm(lib.dims - box.dims, axis=1), dev))
        return lib.entries[int(order[0])]
    return lib.by_id(select_best_point_model(lib, box, raw_points, spec.origin))


def rc_ppcg_frame(
    frame: Frame,
    boxes: list[Box3D],
    lib: ModelLibrary,
    spec: SensorSpec,
    cfg: PpcgConfig,
) -> tuple[Frame, list[PseudoPointSet]]:
    """Replace sparse boxes' interiors with RC pseudo points.

    Boxes at or above the gate are untouched. Overlapping boxes are processed
    in decreasing interior-count order; a point consumed by one box is
    unavailable to later ones. An empty RC result restores the originals and
    flags the box.
    """
    n = len(frame)
    consumed = np.zeros(n, dtype=bool)
    interiors = {i: points_in_box(frame.points, b) for i, b in enumerate(boxes)}
    order = sorted(range(len(boxes)), key=lambda i: (-len(interiors[i]), i))

    removed = np.zeros(n, dtype=bool)
    results: list[PseudoPointSet] = []
    for i in order:
        idx = interiors[i][~consumed[interiors[i]]]
        if len(idx) >= cfg.rc_max_points_gate:
            continue
        consumed[idx] = True
        if len(idx) == 0:
            results.append(
                PseudoPointSet(
                    points=np.zeros((0, 3)), source="RC", box_id=i,
                    flags=("rc_no_interior_points",),
                )
            )
            continue
        raw = frame.points[idx]
        model = _select_model(lib, boxes[i], raw, spec)
        posed = align_model_to_box(model, boxes[i])
        pset = rc_ppcg_box(boxes[i], raw, posed, spec)
        pset = dataclasses.replace(
            pset,
            box_id=i,
            intensity=float(np.mean(frame.intensities[idx])),
        )
        if len(pset) == 0:
            pset = dataclasses.replace(pset, flags=pset.flags + ("rc_empty_restored",))
        else:
            removed[idx] = True
        results.append(pset)

    results.sort(key=lambda p: p.box_id)
    keep = ~removed
    parts_p = [frame.points[keep]]
    parts_i = [frame.intensities[keep]]
    for pset in results:
        if len(pset):
            parts_p.append(pset.points)
            parts_i.append(np.full(len(pset), pset.intensity))
    out = dataclasses.replace(
        frame, points=np.vstack(parts_p), intensities=np.concatenate(parts_i)
    )
    return out, results


def cf_ppcg_frame(
    frame: Frame,
    boxes: list[Box3D],
    lib: ModelLibrary,
    spec: SensorSpec,
    cfg: PpcgConfig,
    rng: np.random.Generator | None = None,
) -> tuple[Frame, list[PseudoPointSet]]:
    """Generate one CF sample per box; the frame passes through untouched."""
    if rng is None:
        rng = frame_rng(cfg.seed, frame.id, salt=1)
    results = []
    for i, box in enumerate(boxes):
        idx = points_in_box(frame.points, box)
        model = _select_model(lib, box, frame.points[idx], spec)
        pset = cf_ppcg_box(box, model, spec, cfg, rng)
        results.append(dataclasses.replace(pset, box_id=i))
    return frame, results

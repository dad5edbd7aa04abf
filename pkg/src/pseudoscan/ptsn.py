"""Post-training size normalization: find the unbiased scale for a detector.

The predicted mean object size at scale s is the nested mean

    mean_size(s) = (1/N) * sum_i (1/O_i) * sum_j size(detect(s * frame_i)_j) / s

averaged per frame, then across frames with at least one detection. The
search walks a scale grid and picks the s whose mean size best matches an
externally estimated target mean.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import AllFramesEmpty, MissingFrame, ParseError, ScaleNotRecorded
from .geom import Box3D, scale_frame, unscale_box, wrap_angle
from .io import Frame


@dataclass(frozen=True)
class DetectionSet:
    frame_id: str
    boxes: tuple[Box3D, ...]
    confidences: tuple[float, ...]

    def __post_init__(self):
        if len(self.boxes) != len(self.confidences):
            raise ValueError("boxes and confidences must align")

    def __len__(self) -> int:
        return len(self.boxes)


class Detector(Protocol):
    """Pluggable detector contract.

    ``scale`` reports the factor already applied to the frame's points; live
    detectors ignore it, the replay bridge uses it to index its recordings.
    Implementations must be deterministic for identical input and safe to
    call concurrently.
    """

    def detect(self, frame: Frame, scale: float = 1.0) -> DetectionSet: ...


@dataclass(frozen=True)
class MeanSize:
    l: float
    w: float
    h: float
    frames_used: int = 0
    frames_skipped: int = 0

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.l, self.w, self.h])


class SizeMetric(str, Enum):
    VOLUME = "VOLUME"
    DIMS_L2 = "DIMS_L2"


def default_scale_grid() -> np.ndarray:
    return np.round(np.arange(0.80, 1.40 + 1e-9, 0.01), 10)


@dataclass(frozen=True)
class PtsnConfig:
    estimated_mean: MeanSize
    scale_grid: np.ndarray = field(default_factory=default_scale_grid)
    metric: SizeMetric = SizeMetric.DIMS_L2
    confidence_floor: float = 0.6

    def __post_init__(self):
        grid = np.asarray(self.scale_grid, dtype=np.float64)
        if grid.size == 0 or np.any(grid <= 0.0) or np.any(np.diff(grid) <= 0.0):
            raise ValueError("scale grid must be non-empty, positive, strictly ascending")
        object.__setattr__(self, "scale_grid", grid)
        object.__setattr__(self, "metric", SizeMetric(self.metric))


def predicted_mean_size(detector: Detector, frames, s: float, cfg: PtsnConfig) -> MeanSize:
    """Nested mean of detection sizes at scale ``s`` (sizes mapped back by 1/s).

    Detections under the confidence floor are dropped; frames left with zero
    detections are skipped and counted separately.
    """
    if not (s > 0.0):
        raise ValueError("scale must be positive")
    frames = list(frames)
    if not frames:
        raise ValueError("no frames supplied")
    per_frame = []
    skipped = 0
    for frame in frames:
        det = detector.detect(scale_frame(frame, s), scale=s)
        dims = [
            np.array([b.l, b.w, b.h]) / s
            for b, c in zip(det.boxes, det.confidences)
            if c >= cfg.confidence_floor
        ]
        if not dims:
            skipped += 1
            continue
        per_frame.append(np.mean(dims, axis=0))
    if not per_frame:
        raise AllFramesEmpty(f"no detections above conf {cfg.confidence_floor} at scale {s}")
    mean = np.mean(per_frame, axis=0)
    return MeanSize(
        l=float(mean[0]),
        w=float(mean[1]),
        h=float(mean[2]),
        frames_used=len(per_frame),
        frames_skipped=skipped,
    )


def _residual(pred: MeanSize, est: MeanSize, metric: SizeMetric) -> float:
    if metric is SizeMetric.VOLUME:
        return abs(pred.volume - est.volume)
    return float(np.linalg.norm(pred.dims - est.dims))


def ptsn_search(detector: Detector, frames, cfg: PtsnConfig) -> tuple[float, list[tuple[float, MeanSize]]]:
    """Scan the scale grid; returns (best scale, full (s, mean size) curve).

    The best scale minimizes the configured residual against the estimated
    mean; ties break toward the scale nearest 1.0, then the smaller scale.
    """
    frames = list(frames)
    curve = [(float(s), predicted_mean_size(detector, frames, float(s), cfg)) for s in cfg.scale_grid]
    best = min(
        curve,
        key=lambda sm: (_residual(sm[1], cfg.estimated_mean, cfg.metric), abs(sm[0] - 1.0), sm[0]),
    )
    return best[0], curve


def generate_pseudo_labels(detector: Detector, frames, s_hat: float, cfg: PtsnConfig) -> dict[str, DetectionSet]:
    """Detect on scaled frames and map each box back by 1/s_hat.

    Confidences carry through; headings are copied bit-exactly.
    """
    out: dict[str, DetectionSet] = {}
    for frame in frames:
        det = detector.detect(scale_frame(frame, s_hat), scale=s_hat)
        out[frame.id] = DetectionSet(
            frame_id=frame.id,
            boxes=tuple(unscale_box(b, s_hat) for b in det.boxes),
            confidences=det.confidences,
        )
    return out


def estimate_mean_from_stats(path) -> MeanSize:
    """Target-mean estimate from a source-annotation statistics file.

    Accepts ``{"mean_lwh_m": [l, w, h]}`` or ``{"boxes_lwh_m": [[l, w, h], ...]}``.
    """
    doc = json.loads(Path(path).read_text())
    if "mean_lwh_m" in doc:
        l, w, h = doc["mean_lwh_m"]
    elif "boxes_lwh_m" in doc:
        arr = np.asarray(doc["boxes_lwh_m"], dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3 or not len(arr):
            raise ParseError("boxes_lwh_m must be a non-empty Nx3 array", path=path)
        l, w, h = arr.mean(axis=0)
    else:
        raise ParseError("need it or boxes_lwh_m", path=path, field="mean_lwh_m")
    return MeanSize(l=float(l), w=float(w), h=float(h))


# ---------------------------------------------------------------------------
# Shipped detectors: synthetic (cluster-based) and replay
# ---------------------------------------------------------------------------


def _grid_cluster(points: np.ndarray, cell: float, min_points: int) -> list[np.ndarray]:
    """Connected components of occupied grid cells (26-neighborhood).

    Deterministic: clusters come out ordered by their lowest point index.
    """
    if len(points) == 0:
        return []
    keys = np.floor(points / cell).astype(np.int64)
    cells: dict[tuple, list[int]] = {}
    for i, k in enumerate(map(tuple, keys)):
        cells.setdefault(k, []).append(i)
    seen = set()
    clusters = []
    for start in cells:
        if start in seen:
            continue
        component = []
        stack = [start]
        seen.add(start)
        while stack:
            cur = stack.pop()
            component.extend(cells[cur])
            cx, cy, cz = cur
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for dz in (-1, 0, 1):
                        nb = (cx + dx, cy + dy, cz + dz)
                        if nb in cells and nb not in seen:
                            seen.add(nb)
                            stack.append(nb)
        if len(component) >= min_points:
            clusters.append(np.array(sorted(component)))
    clusters.sort(key=lambda c: int(c[0]))
    return clusters


@dataclass(frozen=True)
class SyntheticDetector:
    """Cluster-based test double emulating a source-domain-trained network.

    Emits one box per grid-hash cluster with dimensions drawn around
    ``source_mean`` in the *scaled* coordinate system, i.e. independent of
    the input scale, which is exactly the bias the scale search corrects.
    """

    source_mean: MeanSize
    jitter: float = 0.0
    seed: int = 0
    cell: float = 2.0
    min_points: int = 1
    confidence: float = 0.9

    def __post_init__(self):
        if not (0.0 <= self.jitter < 0.5):
            raise ValueError("jitter must be in [0, 0.5)")

    def detect(self, frame: Frame, scale: float = 1.0) -> DetectionSet:
        clusters = _grid_cluster(frame.points, self.cell, self.min_points)
        boxes = []
        confs = []
        base = self.source_mean.dims
        for k, idx in enumerate(clusters):
            rng = np.random.default_rng([self.seed, zlib.crc32(frame.id.encode()), k])
            dims = base * (1.0 + rng.uniform(-self.jitter, self.jitter, size=3))
            heading = wrap_angle(rng.uniform(-math.pi, math.pi))
            cx, cy, cz = frame.points[idx].mean(axis=0)
            boxes.append(
                Box3D(x=float(cx), y=float(cy), z=float(cz),
                      l=float(dims[0]), w=float(dims[1]), h=float(dims[2]),
                      heading=float(heading))
            )
            confs.append(self.confidence)
        return DetectionSet(frame_id=frame.id, boxes=tuple(boxes), confidences=tuple(confs))


def make_synthetic_detector(source_mean: MeanSize, jitter: float = 0.0, seed: int = 0, **kw) -> SyntheticDetector:
    return SyntheticDetector(source_mean=source_mean, jitter=jitter, seed=seed, **kw)


@dataclass(frozen=True)
class EquivariantDetector:
    """Scale-equivariant test double: boxes follow cluster geometry exactly,
    so detect(s * frame) == s * detect(frame). Used to verify that the label
    rescaling is a clean round trip."""

    cell: float = 2.0
    min_points: int = 1
    confidence: float = 0.9
    min_dim: float = 0.05

    def detect(self, frame: Frame, scale: float = 1.0) -> DetectionSet:
        # cluster in scale-free coordinates so membership is scale-stable
        pts = frame.points
        span = float(np.abs(pts).max()) if len(pts) else 1.0
        ref = pts / span if span > 0 else pts
        clusters = _grid_cluster(ref, self.cell / 50.0, self.min_points)
        boxes = []
        for idx in clusters:
            sub = pts[idx]
            lo, hi = sub.min(axis=0), sub.max(axis=0)
            dims = np.maximum(hi - lo, self.min_dim * span)
            c = (lo + hi) / 2.0
            boxes.append(
                Box3D(x=float(c[0]), y=float(c[1]), z=float(c[2]),
                      l=float(dims[0]), w=float(dims[1]), h=float(dims[2]),
                      heading=0.0)
            )
        return DetectionSet(
            frame_id=frame.id,
            boxes=tuple(boxes),
            confidences=tuple(self.confidence for _ in boxes),
        )


def make_scale_equivariant_detector(**kw) -> EquivariantDetector:
    return EquivariantDetector(**kw)


class ReplayDetector:
    """Offline bridge to real networks: recorded detections keyed by
    (frame id, scale bucket). JSON-lines records:

        {"frame_id": ..., "scale": ..., "boxes": [{x,y,z,l,w,h,heading,conf}]}
    """

    SCALE_TOL = 0.005

    def __init__(self, path):
        self.path = Path(path)
        self._records: dict[str, list[tuple[float, DetectionSet]]] = {}
        for lineno, line in enumerate(self.path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(str(e.msg), path=self.path, line=lineno) from e
            for fname in ("frame_id", "scale", "boxes"):
                if fname not in rec:
                    raise ParseError("record is missing it", path=self.path, line=lineno, field=fname)
            boxes = []
            confs = []
            for b in rec["boxes"]:
                boxes.append(Box3D(x=b["x"], y=b["y"], z=b["z"], l=b["l"], w=b["w"], h=b["h"],
                                   heading=wrap_angle(b["heading"])))
                confs.append(float(b.get("conf", 1.0)))
            ds = DetectionSet(frame_id=rec["frame_id"], boxes=tuple(boxes), confidences=tuple(confs))
            self._records.setdefault(rec["frame_id"], []).append((float(rec["scale"]), ds))

    def recorded_scales(self, frame_id: str) -> list[float]:
        if frame_id not in self._records:
            raise MissingFrame(f"{self.path}: no records for frame {frame_id!r}")
        return sorted(s for s, _ in self._records[frame_id])

    def detect(self, frame: Frame, scale: float = 1.0) -> DetectionSet:
        if frame.id not in self._records:
            raise MissingFrame(f"{self.path}: no records for frame {frame.id!r}")
        recs = self._records[frame.id]
        nearest = min(recs, key=lambda r: abs(r[0] - scale))
        if abs(nearest[0] - scale) > self.SCALE_TOL:
            raise ScaleNotRecorded(
                f"{self.path}: frame {frame.id!r} has no record within "
                f"{self.SCALE_TOL} of scale {scale}"
            )
        return nearest[1]


def make_replay_detector(path) -> ReplayDetector:
    return ReplayDetector(path)


def write_replay_records(path, records) -> None:
    """Append-style writer for replay files; ``records`` yields
    (frame_id, scale, DetectionSet-like)."""
    lines = []
    for frame_id, scale, det in records:
        lines.append(
            json.dumps(
                {
                    "frame_id": frame_id,
                    "scale": scale,
                    "boxes": [
                        {
                            "x": b.x, "y": b.y, "z": b.z,
                            "l": b.l, "w": b.w, "h": b.h,
                            "heading": b.heading, "conf": c,
                        }
                        for b, c in zip(det.boxes, det.confidences)
                    ],
                }
            )
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))

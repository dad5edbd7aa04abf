"""Dataset ingestion and artifact persistence.

Point clouds are stored KITTI-style: little-endian float32 quadruples
(x, y, z, intensity). Labels are whitespace text, one box per line. Storage
is float32 / 6-decimal text; everything is promoted to float64 in memory so
scale round-trips have headroom.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IoError, NonFiniteValue, ParseError, TruncatedFile
from .geom import Box3D, wrap_angle

POINT_RECORD_BYTES = 16  # 4 x float32


@dataclass(frozen=True)
class Frame:
    """One LiDAR sweep: points (N, 3) float64 plus per-point intensity."""

    id: str
    points: np.ndarray
    intensities: np.ndarray
    sensor_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        inten = np.asarray(self.intensities, dtype=np.float64).reshape(-1)
        if len(pts) != len(inten):
            raise ValueError(f"{len(pts)} points but {len(inten)} intensities")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "intensities", inten)

    def __len__(self) -> int:
        return len(self.points)


def read_point_bin(path, frame_id: str | None = None, sensor_id: str = "") -> Frame:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % POINT_RECORD_BYTES != 0:
        raise TruncatedFile(
            f"{path}: {len(raw)} bytes is not a multiple of {POINT_RECORD_BYTES}"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    bad = np.nonzero(~np.isfinite(data).all(axis=1))[0]
    if len(bad):
        raise NonFiniteValue(f"{path}: non-finite value", index=int(bad[0]))
    return Frame(
        id=frame_id if frame_id is not None else path.stem,
        points=data[:, :3],
        intensities=data[:, 3],
        sensor_id=sensor_id,
    )


def write_point_bin(frame: Frame, path) -> None:
    data = np.empty((len(frame), 4), dtype="<f4")
    data[:, :3] = frame.points
    data[:, 3] = frame.intensities
    Path(path).write_bytes(data.tobytes())


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------


def _ply_header(n: int) -> bytes:
    return (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property float intensity\n"
        "end_header\n"
    ).encode("ascii")


def write_ply(obj, path) -> None:
    """Write points + intensity as binary little-endian PLY.

    Accepts a :class:`Frame`, anything with ``points`` and a scalar
    ``intensity`` attribute (pseudo point sets), or a bare (N, 3) array
    (intensity zero).
    """
    if isinstance(obj, Frame):
        pts, inten = obj.points, obj.intensities
    elif hasattr(obj, "points") and hasattr(obj, "intensity"):
        pts = np.asarray(obj.points, dtype=np.float64).reshape(-1, 3)
        inten = np.full(len(pts), float(obj.intensity))
    else:
        pts = np.asarray(obj, dtype=np.float64).reshape(-1, 3)
        inten = np.zeros(len(pts))
    data = np.empty((len(pts), 4), dtype="<f4")
    data[:, :3] = pts
    data[:, 3] = inten
    try:
        with open(path, "wb") as f:
            f.write(_ply_header(len(pts)))
            f.write(data.tobytes())
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_ply_points(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a binary-little-endian PLY vertex cloud.

    Returns (points (N, 3) float64, intensities or None). Only float/float32
    vertex properties are understood, which covers everything this package
    writes.
    """
    path = Path(path)
    raw = path.read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file", path=path)
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n"):]
    if "format binary_little_endian 1.0" not in header:
        raise ParseError("expected binary_little_endian 1.0", path=path)
    n = None
    props: list[str] = []
    for ln in header:
        parts = ln.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts and parts[0] == "element" and n is not None and props:
            break
        elif parts[:1] == ["property"] and n is not None:
            if parts[1] not in ("float", "float32"):
                raise ParseError(f"unsupported vertex property type {parts[1]}", path=path)
            props.append(parts[2])
    if n is None:
        raise ParseError("no vertex element", path=path)
    want = n * 4 * len(props)
    if len(body) < want:
        raise TruncatedFile(f"{path}: vertex data truncated")
    data = np.frombuffer(body[:want], dtype="<f4").reshape(n, len(props)).astype(np.float64)
    bad = np.nonzero(~np.isfinite(data).all(axis=1))[0]
    if len(bad):
        raise NonFiniteValue(f"{path}: non-finite value", index=int(bad[0]))
    cols = {name: i for i, name in enumerate(props)}
    for ax in ("x", "y", "z"):
        if ax not in cols:
            raise ParseError(f"vertex element lacks property {ax}", path=path)
    pts = data[:, [cols["x"], cols["y"], cols["z"]]]
    inten = data[:, cols["intensity"]] if "intensity" in cols else None
    return pts, inten


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------


def read_labels(path) -> tuple[list[Box3D], list[float]]:
    """Parse a label file: ``x y z l w h heading [conf]`` per line, '#' comments."""
    path = Path(path)
    boxes: list[Box3D] = []
    confs: list[float] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) not in (7, 8):
            raise ParseError(f"expected 7 or 8 fields, got {len(parts)}", path=path, line=lineno)
        try:
            vals = [float(p) for p in parts]
        except ValueError as e:
            raise ParseError(str(e), path=path, line=lineno) from e
        if not all(np.isfinite(vals)):
            raise ParseError("non-finite value", path=path, line=lineno)
        try:
            box = Box3D(
                x=vals[0], y=vals[1], z=vals[2],
                l=vals[3], w=vals[4], h=vals[5],
                heading=wrap_angle(vals[6]),
            )
        except ValueError as e:
            raise ParseError(str(e), path=path, line=lineno) from e
        boxes.append(box)
        confs.append(vals[7] if len(parts) == 8 else 1.0)
    return boxes, confs


def write_labels(boxes, path, confidences=None) -> None:
    lines = []
    for i, b in enumerate(boxes):
        fields = [b.x, b.y, b.z, b.l, b.w, b.h, b.heading]
        if confidences is not None:
            fields.append(confidences[i])
        lines.append(" ".join(f"{v:.6f}" for v in fields))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------


def apply_ground_shift(frame: Frame, z_offset: float) -> Frame:
    """Shift all Z coordinates so the coordinate origin sits on the ground."""
    if not np.isfinite(z_offset):
        raise ValueError("z_offset must be finite")
    pts = frame.points.copy()
    pts[:, 2] += z_offset
    return dataclasses.replace(frame, points=pts)


def crop_to_range(frame: Frame, xy_limit: float = 75.2, z_range=(-2.0, 4.0)) -> Frame:
    """Optional ingest filter: keep points inside the detection range."""
    p = frame.points
    keep = (
        (np.abs(p[:, 0]) <= xy_limit)
        & (np.abs(p[:, 1]) <= xy_limit)
        & (p[:, 2] >= z_range[0])
        & (p[:, 2] <= z_range[1])
    )
    return dataclasses.replace(
        frame, points=p[keep], intensities=frame.intensities[keep]
    )


# ---------------------------------------------------------------------------
# Dataset manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str           # relative to the manifest root
    sensor_id: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    entries: tuple[ManifestEntry, ...]
    split: str = ""

    def frame_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def load_frame(self, entry: ManifestEntry) -> Frame:
        return read_point_bin(self.frame_path(entry), frame_id=entry.id, sensor_id=entry.sensor_id)

    def validate(self) -> None:
        missing = [e.id for e in self.entries if not self.frame_path(e).exists()]
        if missing:
            raise IoError(f"manifest frames missing on disk: {missing}")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(str(e.msg), path=path, line=e.lineno) from e
    if "frames" not in doc:
        raise ParseError("manifest is missing it", path=path, field="frames")
    entries = []
    seen = set()
    for i, rec in enumerate(doc["frames"]):
        for fname in ("id", "path"):
            if fname not in rec:
                raise ParseError(f"frame entry {i} is missing it", path=path, field=fname)
        if rec["id"] in seen:
            raise ParseError(f"duplicate frame id {rec['id']!r}", path=path)
        seen.add(rec["id"])
        entries.append(ManifestEntry(id=rec["id"], path=rec["path"], sensor_id=rec.get("sensor_id", "")))
    return DatasetManifest(root=path.parent, entries=tuple(entries), split=doc.get("split", ""))


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "split": manifest.split,
        "frames": [
            {"id": e.id, "path": e.path, "sensor_id": e.sensor_id}
            for e in manifest.entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")

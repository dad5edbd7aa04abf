"""3D model library: CAD meshes and dense point instances.

Models live in canonical pose (heading 0, centered in X/Y, base at z = 0) and
are posed per query box by per-axis scaling, a yaw rotation, and a bottom
anchored translation. Rays are cast against mesh models by pulling the ray
into canonical space instead of rebuilding the BVH per pose; the affine map
keeps the ray a straight line and preserves the hit parameter t.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    AssetParseError,
    DegenerateModel,
    EmptyLibrary,
    NoAssets,
    ParseError,
)
from .geom import (
    Box3D,
    Bvh,
    TriangleMesh,
    as_point,
    as_points,
    build_bvh,
    cast_rays,
    clean_mesh,
    wrap_angle,
)

DIMS_QUANTUM = 0.25       # meters, library index bucket size
ANGLE_BUCKETS = 12        # observation-angle buckets for point libraries


class LibraryKind(str, Enum):
    CAD = "CAD"
    POINT = "POINT"


# ---------------------------------------------------------------------------
# Mesh asset ingestion (OBJ and binary PLY, vertices in meters)
# ---------------------------------------------------------------------------


def load_mesh_obj(path) -> TriangleMesh:
    verts: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise AssetParseError(f"{path}: line {lineno}: short vertex")
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                base = tok.split("/", 1)[0]
                i = int(base)
                idx.append(i - 1 if i > 0 else len(verts) + i)
            if len(idx) < 3:
                raise AssetParseError(f"{path}: line {lineno}: short face")
            for k in range(1, len(idx) - 1):  # fan triangulation
                faces.append((idx[0], idx[k], idx[k + 1]))
    if not verts or not faces:
        raise AssetParseError(f"{path}: no geometry")
    try:
        return TriangleMesh(np.asarray(verts), np.asarray(faces))
    except ValueError as e:
        raise AssetParseError(f"{path}: {e}") from e


def save_mesh_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh_ply(path) -> TriangleMesh:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise AssetParseError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n"):]
    if "format binary_little_endian 1.0" not in header:
        raise AssetParseError(f"{path}: expected binary_little_endian 1.0")
    n_vert = n_face = None
    current = None
    vert_props = 0
    for ln in header:
        parts = ln.split()
        if parts[:1] == ["element"]:
            current = parts[1]
            if current == "vertex":
                n_vert = int(parts[2])
            elif current == "face":
                n_face = int(parts[2])
        elif parts[:1] == ["property"] and current == "vertex":
            if parts[1] not in ("float", "float32"):
                raise AssetParseError(f"{path}: unsupported vertex property {parts[1]}")
            vert_props += 1
    if n_vert is None or n_face is None:
        raise AssetParseError(f"{path}: need vertex and face elements")
    vbytes = n_vert * 4 * vert_props
    if len(body) < vbytes:
        raise AssetParseError(f"{path}: vertex data truncated")
    verts = np.frombuffer(body[:vbytes], dtype="<f4").reshape(n_vert, vert_props)[:, :3]
    faces = np.empty((n_face, 3), dtype=np.int64)
    off = vbytes
    for i in range(n_face):
        if off + 1 > len(body):
            raise AssetParseError(f"{path}: face data truncated")
        (cnt,) = struct.unpack_from("<B", body, off)
        off += 1
        if cnt != 3:
            raise AssetParseError(f"{path}: face {i} has {cnt} vertices, expected triangles")
        faces[i] = struct.unpack_from("<3i", body, off)
        off += 12
    return TriangleMesh(verts.astype(np.float64), faces)


def save_mesh_ply(mesh: TriangleMesh, path) -> None:
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(mesh.vertices)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {len(mesh.triangles)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    ).encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(mesh.vertices.astype("<f4").tobytes())
        for a, b, c in mesh.triangles:
            f.write(struct.pack("<B3i", 3, a, b, c))


def load_mesh(path) -> TriangleMesh:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return load_mesh_obj(path)
    if path.suffix.lower() == ".ply":
        return load_mesh_ply(path)
    raise AssetParseError(f"{path}: unknown mesh format {path.suffix!r}")


def canonicalize_mesh(mesh: TriangleMesh) -> tuple[TriangleMesh, np.ndarray]:
    """Translate to canonical pose; returns (mesh, canonical dims)."""
    lo, hi = mesh.aabb
    offset = np.array([(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, lo[2]])
    return mesh.translated(-offset), hi - lo


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeshModel:
    id: str
    mesh: TriangleMesh
    bvh: Bvh
    canonical_dims: np.ndarray


@dataclass(frozen=True)
class PointModel:
    id: str
    points: np.ndarray                 # canonical pose
    source_observation_angle: float    # radians
    source_distance: float             # meters
    canonical_dims: np.ndarray


@dataclass(frozen=True)
class ModelLibrary:
    kind: LibraryKind
    entries: tuple                      # MeshModel | PointModel, sorted by id
    dims: np.ndarray                    # (N, 3) canonical dims
    angles: np.ndarray | None           # (N,) observation angles (POINT only)
    index: dict = field(repr=False, default_factory=dict)
    report: tuple = ()                  # ((asset id, reason), ...) rejections

    def __len__(self) -> int:
        return len(self.entries)

    def by_id(self, model_id: str):
        for e in self.entries:
            if e.id == model_id:
                return e
        raise KeyError(model_id)


@dataclass(frozen=True)
class LibraryFilter:
    """Asset admission rules. Category/year rules apply only when the
    manifest entry carries that metadata."""

    min_length_m: float = 2.0
    max_length_m: float = 8.0
    min_interior_points: int = 300
    excluded_categories: tuple = ("emergency",)
    min_year: int | None = 2000


def _dims_key(dims) -> tuple[int, int, int]:
    return tuple(int(math.floor(d / DIMS_QUANTUM)) for d in dims)


def _angle_bucket(angle: float) -> int:
    return int((wrap_angle(angle) + math.pi) / (2 * math.pi / ANGLE_BUCKETS)) % ANGLE_BUCKETS


def _build_index(kind: LibraryKind, dims, angles) -> dict:
    index: dict = {}
    for i, d in enumerate(dims):
        key = _dims_key(d)
        if kind is LibraryKind.POINT:
            key = key + (_angle_bucket(float(angles[i])),)
        index.setdefault(key, []).append(i)
    return index


def build_library(assets_path, kind: LibraryKind | str, flt: LibraryFilter | None = None) -> ModelLibrary:
    """Build a model library from a manifest directory.

    ``assets_path`` is a directory holding ``manifest.json`` (or the manifest
    file itself). Rejected assets are reported, not fatal; an unreadable asset
    is skipped with its parse error recorded.
    """
    kind = LibraryKind(kind)
    flt = flt or LibraryFilter()
    manifest_path = Path(assets_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.exists():
        raise NoAssets(f"no manifest at {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(str(e.msg), path=manifest_path, line=e.lineno) from e
    if LibraryKind(doc.get("kind", kind)) is not kind:
        raise NoAssets(f"manifest kind {doc.get('kind')!r} does not match requested {kind.value!r}")
    root = manifest_path.parent

    entries = []
    report: list[tuple[str, str]] = []
    for rec in doc.get("entries", []):
        asset_id = str(rec.get("id", "?"))
        try:
            model, note = _admit(root, rec, kind, flt)
        except AssetParseError as e:
            report.append((asset_id, f"rejected: parse error: {e}"))
            continue
        if model is None:
            report.append((asset_id, f"rejected: {note}"))
        else:
            entries.append(model)
            if note:
                report.append((asset_id, note))
    if not entries:
        raise NoAssets(f"{manifest_path}: no assets admitted ({len(report)} reported)")

    entries.sort(key=lambda m: m.id)
    dims = np.array([m.canonical_dims for m in entries])
    angles = (
        np.array([m.source_observation_angle for m in entries])
        if kind is LibraryKind.POINT
        else None
    )
    return ModelLibrary(
        kind=kind,
        entries=tuple(entries),
        dims=dims,
        angles=angles,
        index=_build_index(kind, dims, angles),
        report=tuple(report),
    )


def _admit(root: Path, rec: dict, kind: LibraryKind, flt: LibraryFilter):
    asset_id = str(rec.get("id", "?"))
    path = root / rec["path"]
    if kind is LibraryKind.CAD:
        category = rec.get("category")
        if category is not None and category in flt.excluded_categories:
            return None, f"category:{category}"
        year = rec.get("year")
        if flt.min_year is not None and year is not None and year < flt.min_year:
            return None, f"year<{flt.min_year}"
        mesh = load_mesh(path)
        mesh, n_dropped = clean_mesh(mesh)
        if mesh.n_triangles == 0:
            return None, "no non-degenerate triangles"
        mesh, dims = canonicalize_mesh(mesh)
        if dims[0] > flt.max_length_m:
            return None, f"length>{flt.max_length_m:g}m"
        if dims[0] < flt.min_length_m:
            return None, f"length<{flt.min_length_m:g}m"
        model = MeshModel(id=asset_id, mesh=mesh, bvh=build_bvh(mesh), canonical_dims=dims)
        if n_dropped:
            # degenerate slivers are expected in real CAD; keep the asset,
            # note the cleanup
            return model, f"kept: dropped {n_dropped} degenerate triangles"
        return model, ""
    # POINT
    for fname in ("dims_lwh_m", "observation_angle_deg"):
        if fname not in rec:
            raise AssetParseError(f"{path}: manifest entry lacks {fname}")
    dims = np.asarray(rec["dims_lwh_m"], dtype=np.float64)
    from .io import read_ply_points  # local import; io pulls in geom only

    points, _ = read_ply_points(path)
    half = dims / 2.0
    inside = (
        (np.abs(points[:, 0]) <= half[0] + 1e-6)
        & (np.abs(points[:, 1]) <= half[1] + 1e-6)
        & (points[:, 2] >= -1e-6)
        & (points[:, 2] <= dims[2] + 1e-6)
    )
    points = points[inside]
    if len(points) < flt.min_interior_points:
        return None, f"points<{flt.min_interior_points}"
    return (
        PointModel(
            id=asset_id,
            points=points,
            source_observation_angle=math.radians(rec["observation_angle_deg"]),
            source_distance=float(rec.get("source_distance_m", 0.0)),
            canonical_dims=dims,
        ),
        "",
    )


def write_library_report(lib: ModelLibrary, path) -> None:
    lines = [f"admitted {len(lib.entries)} {lib.kind.value} models"]
    for asset_id, note in lib.report:
        lines.append(f"{asset_id}: {note}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------


def select_best_cad(lib: ModelLibrary, box: Box3D) -> str:
    """Model id with minimal L2 size deviation from the box dims."""
    if not len(lib.entries):
        raise EmptyLibrary("CAD library is empty")
    d = np.linalg.norm(lib.dims - box.dims, axis=1)
    return lib.entries[int(np.argmin(d))].id


def observation_angle(box: Box3D, sensor_origin) -> float:
    """Planar angle between box heading and the sensor-to-box direction."""
    o = as_point(sensor_origin)
    az = math.atan2(box.y - o[1], box.x - o[0])
    return wrap_angle(az - box.heading)


def chamfer_distance(a, b) -> float:
    """Symmetric Chamfer distance: mean NN distance both ways, summed."""
    a = as_points(a)
    b = as_points(b)
    if len(a) == 0 or len(b) == 0:
        return math.inf
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    return float(np.mean(d.min(axis=1)) + np.mean(d.min(axis=0)))


def _normalized_query(box: Box3D, raw_points) -> np.ndarray:
    p = as_points(raw_points) - box.center
    c, s = math.cos(box.heading), math.sin(box.heading)
    q = np.empty_like(p)
    q[:, 0] = (c * p[:, 0] + s * p[:, 1]) / box.l
    q[:, 1] = (-s * p[:, 0] + c * p[:, 1]) / box.w
    q[:, 2] = p[:, 2] / box.h
    return q


def _normalized_model(m: PointModel) -> np.ndarray:
    q = m.points - np.array([0.0, 0.0, m.canonical_dims[2] / 2.0])
    return q / m.canonical_dims


# widening stages for the observation-angle gate; the last stage accepts all
ANGLE_STAGES = (math.radians(30.0), math.radians(90.0), math.inf)


def select_best_point_model(lib: ModelLibrary, box: Box3D, raw_points, sensor_origin) -> str:
    """Best point model: similar observation angle, then minimal Chamfer
    distance between dimension-normalized clouds."""
    if not len(lib.entries):
        raise EmptyLibrary("point library is empty")
    raw_points = as_points(raw_points)
    if len(raw_points) == 0:
        raise ValueError("select_best_point_model needs a non-empty query cloud")
    q_angle = observation_angle(box, sensor_origin)
    dev = np.abs([wrap_angle(a - q_angle) for a in lib.angles])
    for stage in ANGLE_STAGES:
        candidates = np.nonzero(dev <= stage)[0]
        if len(candidates):
            break
    query = _normalized_query(box, raw_points)
    best = None
    for i in candidates:
        m = lib.entries[int(i)]
        cd = chamfer_distance(query, _normalized_model(m))
        if best is None or cd < best[0]:
            best = (cd, m.id)
    return best[1]


# ---------------------------------------------------------------------------
# Posing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PosedModel:
    """A library model fitted to a box: per-axis scale, yaw, translation.

    For mesh models, casting transforms the ray into canonical space (valid
    as a world-space BVH view because the affine map preserves the hit
    parameter t); for point models the world-space cloud is materialized.
    """

    model: MeshModel | PointModel
    box: Box3D
    scale: np.ndarray          # (s_l, s_w, s_h)
    heading: float
    translation: np.ndarray    # world position of the canonical origin
    points_world: np.ndarray | None = None

    @property
    def is_mesh(self) -> bool:
        return isinstance(self.model, MeshModel)

    def to_world(self, canonical) -> np.ndarray:
        p = as_points(canonical) * self.scale
        c, s = math.cos(self.heading), math.sin(self.heading)
        out = np.empty_like(p)
        out[:, 0] = c * p[:, 0] - s * p[:, 1]
        out[:, 1] = s * p[:, 0] + c * p[:, 1]
        out[:, 2] = p[:, 2]
        return out + self.translation

    def _ray_to_canonical(self, origin, directions):
        c, s = math.cos(self.heading), math.sin(self.heading)
        o = as_point(origin) - self.translation
        o = np.array([c * o[0] + s * o[1], -s * o[0] + c * o[1], o[2]]) / self.scale
        d = as_points(directions)
        dc = np.empty_like(d)
        dc[:, 0] = (c * d[:, 0] + s * d[:, 1]) / self.scale[0]
        dc[:, 1] = (-s * d[:, 0] + c * d[:, 1]) / self.scale[1]
        dc[:, 2] = d[:, 2] / self.scale[2]
        return o, dc

    def cast_many(self, origin, directions) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cast world-space rays; returns (hit mask, t, world points).

        World points are reconstructed as origin + t * direction so hits are
        colinear with their rays to machine precision.
        """
        if not self.is_mesh:
            raise TypeError("cast_many applies to mesh models")
        o_c, d_c = self._ray_to_canonical(origin, directions)
        hit, t, _ = cast_rays(self.model.bvh, self.model.mesh, o_c, d_c)
        d = as_points(directions)
        pts = np.full((len(d), 3), np.nan)
        pts[hit] = as_point(origin) + t[hit, None] * d[hit]
        return hit, t, pts


def align_model_to_box(model: MeshModel | PointModel, box: Box3D) -> PosedModel:
    """Fit the model to the box: scale per axis, rotate to the box heading,
    translate bottom-anchored (canonical z = 0 maps to the box bottom)."""
    dims = np.asarray(model.canonical_dims, dtype=np.float64)
    if np.any(dims <= 1e-6):
        raise DegenerateModel(f"model {model.id}: canonical dims {dims} too small")
    scale = box.dims / dims
    translation = np.array([box.x, box.y, box.z - box.h / 2.0])
    posed = PosedModel(
        model=model,
        box=box,
        scale=scale,
        heading=box.heading,
        translation=translation,
    )
    if isinstance(model, PointModel):
        posed = PosedModel(
            model=model,
            box=box,
            scale=scale,
            heading=box.heading,
            translation=translation,
            points_world=posed.to_world(model.points),
        )
    return posed

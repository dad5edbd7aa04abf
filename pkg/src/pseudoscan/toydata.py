"""Deterministic toy dataset builder.

Generates everything an end-to-end run needs: a small sensor library, CAD
and point-model libraries built from procedural car meshes, frames whose
points cluster inside ground-truth boxes, label files, and an estimated-mean
stats file. Used by the demo scripts and the test suite; real datasets are
ingested through the same manifests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as pio
from .geom import Box3D, TriangleMesh, wrap_angle
from .meshgen import car_mesh
from .models import save_mesh_obj

TOY_SENSORS = [
    {
        "name": "toy",
        "beams": 24,
        "elevation_min_deg": -12.0,
        "elevation_max_deg": 2.0,
        "points_per_beam": 360,
        "origin_xyz_m": [0.0, 0.0, 1.2],
    },
    {
        "name": "toy_dense",
        "beams": 48,
        "elevation_min_deg": -16.0,
        "elevation_max_deg": 3.0,
        "points_per_beam": 900,
        "origin_xyz_m": [0.0, 0.0, 1.2],
    },
]

CAR_VARIANTS = [
    ("car_small", 3.9, 1.65, 1.45),
    ("car_mid", 4.4, 1.82, 1.55),
    ("car_large", 4.9, 2.02, 1.72),
]


def sample_mesh_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform samples on the mesh surface."""
    v0, v1, v2 = mesh.triangle_vertices()
    areas = mesh.triangle_areas()
    probs = areas / areas.sum()
    tri = rng.choice(len(areas), size=n, p=probs)
    r1 = np.sqrt(rng.uniform(size=(n, 1)))
    r2 = rng.uniform(size=(n, 1))
    a, b, c = v0[tri], v1[tri], v2[tri]
    return (1 - r1) * a + r1 * (1 - r2) * b + r1 * r2 * c


def write_toy_libraries(root: Path, rng: np.random.Generator, n_point_models: int = 4) -> tuple[Path, Path]:
    """CAD and point libraries under root; returns their directories."""
    cad_dir = root / "cad_library"
    cad_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, l, w, h in CAR_VARIANTS:
        mesh = car_mesh(l, w, h)
        save_mesh_obj(mesh, cad_dir / f"{name}.obj")
        lo, hi = mesh.aabb
        entries.append({"id": name, "path": f"{name}.obj", "dims_lwh_m": [float(d) for d in hi - lo]})
    (cad_dir / "manifest.json").write_text(json.dumps({"kind": "CAD", "entries": entries}, indent=2))

    pt_dir = root / "point_library"
    pt_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_point_models):
        name, l, w, h = CAR_VARIANTS[i % len(CAR_VARIANTS)]
        mesh = car_mesh(l, w, h)
        pts = sample_mesh_surface(mesh, 420, rng)
        mid = f"pm_{i:02d}"
        pio.write_ply(pts, pt_dir / f"{mid}.ply")
        entries.append(
            {
                "id": mid,
                "path": f"{mid}.ply",
                "dims_lwh_m": [l, w, h],
                "observation_angle_deg": float(rng.uniform(-180.0, 180.0)),
                "source_distance_m": float(rng.uniform(8.0, 40.0)),
                "point_count": len(pts),
            }
        )
    (pt_dir / "manifest.json").write_text(json.dumps({"kind": "POINT", "entries": entries}, indent=2))
    return cad_dir, pt_dir


def _random_box(rng: np.random.Generator) -> Box3D:
    name, l, w, h = CAR_VARIANTS[rng.integers(len(CAR_VARIANTS))]
    jit = rng.uniform(0.92, 1.08, size=3)
    dist = rng.uniform(8.0, 32.0)
    az = rng.uniform(-math.pi, math.pi)
    hh = h * jit[2]
    return Box3D(
        x=dist * math.cos(az),
        y=dist * math.sin(az),
        z=hh / 2.0,
        l=l * jit[0],
        w=w * jit[1],
        h=hh,
        heading=wrap_angle(rng.uniform(-math.pi, math.pi)),
    )


def make_frame(frame_id: str, boxes: list[Box3D], rng: np.random.Generator,
               points_per_box=(30, 90), sensor_id: str = "toy") -> pio.Frame:
    """Frame whose clusters are surface-ish samples inside each box."""
    pts = []
    for box in boxes:
        n = int(rng.integers(points_per_box[0], points_per_box[1]))
        mesh = car_mesh(box.l * 0.98, box.w * 0.98, box.h * 0.98)
        local = sample_mesh_surface(mesh, n, rng)
        c, s = math.cos(box.heading), math.sin(box.heading)
        world = np.empty_like(local)
        world[:, 0] = c * local[:, 0] - s * local[:, 1] + box.x
        world[:, 1] = s * local[:, 0] + c * local[:, 1] + box.y
        world[:, 2] = local[:, 2] + box.z - box.h / 2.0
        pts.append(world)
    points = np.vstack(pts) if pts else np.zeros((0, 3))
    inten = rng.uniform(0.1, 0.9, size=len(points))
    return pio.Frame(id=frame_id, points=points, intensities=inten, sensor_id=sensor_id)


@dataclass
class ToyDataset:
    root: Path
    manifest_path: Path
    labels_dir: Path
    cad_library: Path
    point_library: Path
    sensors_path: Path
    est_stats_path: Path
    boxes: dict


def make_toy_dataset(root, n_frames: int = 5, boxes_per_frame: int = 2, seed: int = 0) -> ToyDataset:
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    labels_dir = root / "labels"
    labels_dir.mkdir(exist_ok=True)
    rng = np.random.default_rng(seed)

    sensors_path = root / "sensors.json"
    sensors_path.write_text(json.dumps(TOY_SENSORS, indent=2))
    cad_dir, pt_dir = write_toy_libraries(root, rng)

    entries = []
    all_boxes: dict[str, list[Box3D]] = {}
    for i in range(n_frames):
        fid = f"frame_{i:03d}"
        boxes = [_random_box(rng) for _ in range(boxes_per_frame)]
        frame = make_frame(fid, boxes, rng)
        pio.write_point_bin(frame, root / "frames" / f"{fid}.bin")
        pio.write_labels(boxes, labels_dir / f"{fid}.txt", confidences=[0.9] * len(boxes))
        entries.append(pio.ManifestEntry(id=fid, path=f"frames/{fid}.bin", sensor_id="toy"))
        all_boxes[fid] = boxes

    manifest = pio.DatasetManifest(root=root, entries=tuple(entries), split="toy")
    manifest_path = root / "manifest.json"
    pio.save_manifest(manifest, manifest_path)

    dims = np.array([[b.l, b.w, b.h] for bs in all_boxes.values() for b in bs])
    est_stats_path = root / "est_stats.json"
    est_stats_path.write_text(json.dumps({"mean_lwh_m": [float(x) for x in dims.mean(axis=0)]}, indent=2))

    return ToyDataset(
        root=root,
        manifest_path=manifest_path,
        labels_dir=labels_dir,
        cad_library=cad_dir,
        point_library=pt_dir,
        sensors_path=sensors_path,
        est_stats_path=est_stats_path,
        boxes=all_boxes,
    )

"""Parametric LiDAR sensor models and scan-pattern ray generation.

A sensor is a rotating multi-beam unit: ``beams`` elevations spread uniformly
over the elevation range, ``points_per_beam`` azimuth steps per revolution.
Angles are degrees in files and radians in memory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidWindow, ParseError
from .geom import TAU, as_point


@dataclass(frozen=True)
class SensorSpec:
    name: str
    beams: int
    elevation_min: float        # radians
    elevation_max: float        # radians
    points_per_beam: int
    origin: np.ndarray          # sensor position in frame coordinates, meters

    def __post_init__(self):
        object.__setattr__(self, "origin", as_point(self.origin))
        if self.beams < 1 or self.points_per_beam < 1:
            raise ValueError("beams and points_per_beam must be >= 1")
        if not self.elevation_min < self.elevation_max:
            raise ValueError("elevation_min must be below elevation_max")


@dataclass(frozen=True)
class ScanPattern:
    """Ray bundle of one simulated sweep (struct-of-arrays layout)."""

    origin: np.ndarray          # shared ray origin
    directions: np.ndarray      # (N, 3) unit vectors
    beam_index: np.ndarray      # (N,)
    azimuth_index: np.ndarray   # (N,)

    def __len__(self) -> int:
        return len(self.directions)


def angular_threshold(spec: SensorSpec) -> float:
    """Angular gate for matching a ray to a point-model point, radians.

    Twice the sensor's average per-beam point spacing, 2 * (2*pi / ppb).
    Monotone decreasing in points_per_beam.
    """
    return 2.0 * (TAU / spec.points_per_beam)


def generate_scan_rays(
    spec: SensorSpec,
    azimuth_window: tuple[float, float] | None = None,
    phase: float = 0.0,
) -> ScanPattern:
    """Full scan-pattern rays for a sensor, optionally limited to an azimuth arc.

    Beam elevations are uniform over [elevation_min, elevation_max] inclusive;
    azimuths step by 2*pi/points_per_beam anchored at ``phase`` (default 0).
    ``azimuth_window=(lo, hi)`` keeps rays whose azimuth lies on the arc from
    lo to hi (may wrap through pi); the arc length must be positive and at
    most a full circle.
    """
    if spec.beams == 1:
        elevations = np.array([(spec.elevation_min + spec.elevation_max) / 2.0])
    else:
        elevations = np.linspace(spec.elevation_min, spec.elevation_max, spec.beams)
    step = TAU / spec.points_per_beam
    az_idx = np.arange(spec.points_per_beam)
    azimuths = phase + az_idx * step

    if azimuth_window is not None:
        lo, hi = float(azimuth_window[0]), float(azimuth_window[1])
        width = hi - lo
        if not (0.0 < width <= TAU + 1e-12):
            raise InvalidWindow(f"window must be a positive arc of at most 2*pi, got {azimuth_window!r}")
        rel = np.mod(azimuths - lo, TAU)
        keep = rel <= min(width, TAU)
        azimuths = azimuths[keep]
        az_idx = az_idx[keep]

    n_az = len(azimuths)
    ce, se = np.cos(elevations), np.sin(elevations)
    ca, sa = np.cos(azimuths), np.sin(azimuths)
    dirs = np.empty((spec.beams * n_az, 3))
    dirs[:, 0] = np.outer(ce, ca).ravel()
    dirs[:, 1] = np.outer(ce, sa).ravel()
    dirs[:, 2] = np.repeat(se, n_az)
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs /= norms
    return ScanPattern(
        origin=spec.origin,
        directions=dirs,
        beam_index=np.repeat(np.arange(spec.beams), n_az),
        azimuth_index=np.tile(az_idx, spec.beams),
    )


_REQUIRED_FIELDS = {
    "name": str,
    "beams": int,
    "elevation_min_deg": (int, float),
    "elevation_max_deg": (int, float),
    "points_per_beam": int,
    "origin_xyz_m": list,
}


def _spec_from_record(rec: dict, path, index: int) -> SensorSpec:
    for fname, ftype in _REQUIRED_FIELDS.items():
        if fname not in rec:
            raise ParseError(f"sensor entry {index} is missing it", path=path, field=fname)
        if not isinstance(rec[fname], ftype):
            raise ParseError(
                f"sensor entry {index} has wrong type {type(rec[fname]).__name__}",
                path=path,
                field=fname,
            )
    origin = rec["origin_xyz_m"]
    if len(origin) != 3:
        raise ParseError(f"sensor entry {index} needs 3 components", path=path, field="origin_xyz_m")
    return SensorSpec(
        name=rec["name"],
        beams=rec["beams"],
        elevation_min=math.radians(rec["elevation_min_deg"]),
        elevation_max=math.radians(rec["elevation_max_deg"]),
        points_per_beam=rec["points_per_beam"],
        origin=np.asarray(origin, dtype=np.float64),
    )


def load_sensor_library(path=None) -> list[SensorSpec]:
    """Load sensor specs from a JSON library file.

    With ``path=None`` the library shipped with the package is returned
    (kitti / waymo / nuscenes defaults).
    """
    if path is None:
        text = resources.files("pseudoscan.data").joinpath("sensors.json").read_text()
        path = "<builtin sensors.json>"
    else:
        path = Path(path)
        text = path.read_text()
    try:
        records = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(str(e.msg), path=path, line=e.lineno) from e
    if not isinstance(records, list):
        raise ParseError("expected a JSON array of sensor objects", path=path)
    return [_spec_from_record(rec, path, i) for i, rec in enumerate(records)]


def sensor_by_name(name: str, path=None) -> SensorSpec:
    specs = load_sensor_library(path)
    for s in specs:
        if s.name == name:
            return s
    known = ", ".join(s.name for s in specs)
    raise KeyError(f"sensor '{name}' not in library ({known})")

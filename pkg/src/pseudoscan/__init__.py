"""Pseudo-label denoising toolkit for LiDAR domain adaptation.

Two jobs:

* find the post-training scale that aligns a detector's mean predicted
  object size with an estimated target mean (``ptsn``), and
* synthesize noise-free pseudo point clouds for pseudo bounding boxes by
  virtually scanning fitted 3D models with a parametric sensor (``ppcg``).
"""

__version__ = "0.1.0"

from .geom import (
    Box3D,
    Bvh,
    Ray,
    RayHit,
    Triangle,
    TriangleMesh,
    build_bvh,
    cast_ray,
    points_in_box,
    ray_triangle_intersect,
    scale_frame,
    unscale_box,
)
from .io import Frame, read_labels, read_point_bin, write_labels, write_ply, write_point_bin
from .models import (
    LibraryFilter,
    LibraryKind,
    ModelLibrary,
    align_model_to_box,
    build_library,
    select_best_cad,
    select_best_point_model,
)
from .ppcg import PpcgConfig, PseudoPointSet, cf_ppcg_box, cf_ppcg_frame, rc_ppcg_box, rc_ppcg_frame, sample_point_model
from .ptsn import (
    DetectionSet,
    Detector,
    MeanSize,
    PtsnConfig,
    SizeMetric,
    generate_pseudo_labels,
    make_replay_detector,
    make_scale_equivariant_detector,
    make_synthetic_detector,
    predicted_mean_size,
    ptsn_search,
)
from .sensor import SensorSpec, angular_threshold, generate_scan_rays, load_sensor_library

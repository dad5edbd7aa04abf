"""Command-line surface.

Subcommands: scan, rc, cf, ptsn, iterate, validate, bench. Exit codes:
0 success, 1 partial (some frames skipped), 2 configuration/input error.
Every command is deterministic given (inputs, seed); run manifests from
repeated runs differ only in timings.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import io as pio
from .errors import AllFramesEmpty, PseudoscanError
from .geom import Box3D, Ray, build_bvh, cast_ray, cast_ray_naive
from .meshgen import sphere_50k
from .models import LibraryFilter, LibraryKind, build_library, canonicalize_mesh, load_mesh
from .pipeline import iterate_pipeline, write_curve_csv
from .ppcg import PpcgConfig, cf_ppcg_frame, frame_rng, rc_ppcg_frame
from .ptsn import (
    MeanSize,
    PtsnConfig,
    SizeMetric,
    estimate_mean_from_stats,
    make_replay_detector,
    make_synthetic_detector,
    ptsn_search,
)
from .sensor import generate_scan_rays, sensor_by_name
from .models import align_model_to_box

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

ENV_SENSORS = "PSEUDOSCAN_SENSORS"
ENV_LIBRARY = "PSEUDOSCAN_LIBRARY"


def _sha256(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def write_run_manifest(out_dir: Path, command: str, config: dict, inputs: list, outputs: list, timings: dict) -> Path:
    doc = {
        "tool": "pseudoscan",
        "version": __version__,
        "command": command,
        "config": config,
        "input_hashes": {str(p): _sha256(p) for p in inputs if Path(p).is_file()},
        "outputs": [str(p) for p in outputs],
        "timings_s": timings,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "run_manifest.json"
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(doc, indent=2) + "\n")
    tmp.replace(path)
    return path


def _parse_triplet(text: str) -> list[float]:
    parts = [float(x) for x in text.replace(",", " ").split()]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three numbers, got {text!r}")
    return parts


def _parse_grid(text: str) -> np.ndarray:
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"grid must be start:stop:step, got {text!r}") from e
    return np.round(np.arange(start, stop + step / 2.0, step), 10)


def _load_frames(manifest_path) -> list[pio.Frame]:
    manifest = pio.load_manifest(manifest_path)
    manifest.validate()
    return [manifest.load_frame(e) for e in manifest.entries]


def _sensor(args):
    return sensor_by_name(args.sensor, args.sensors or os.environ.get(ENV_SENSORS))


def _library(args):
    path = args.library or os.environ.get(ENV_LIBRARY)
    if path is None:
        raise PseudoscanError("no model library given (flag --library or PSEUDOSCAN_LIBRARY)")
    return build_library(path, LibraryKind(args.kind), LibraryFilter())


# ---------------------------------------------------------------------------
# scan
# ---------------------------------------------------------------------------


def cmd_scan(args) -> int:
    if args.distance <= 0.0:
        print("error: distance must be positive (model would envelop the sensor)", file=sys.stderr)
        return EXIT_CONFIG
    spec = _sensor(args)
    mesh = load_mesh(args.model)
    mesh, dims = canonicalize_mesh(mesh)
    from .models import MeshModel

    model = MeshModel(id=Path(args.model).stem, mesh=mesh, bvh=build_bvh(mesh), canonical_dims=dims)
    box = Box3D(
        x=args.distance, y=0.0, z=dims[2] / 2.0,
        l=dims[0], w=dims[1], h=dims[2],
        heading=math.radians(args.heading),
    )
    if args.distance <= math.hypot(dims[0] / 2.0, dims[1] / 2.0):
        print("error: model would envelop the sensor at this distance", file=sys.stderr)
        return EXIT_CONFIG
    posed = align_model_to_box(model, box)
    t0 = time.perf_counter()
    pattern = generate_scan_rays(spec)
    hit, t, pts = posed.cast_many(pattern.origin, pattern.directions)
    elapsed = time.perf_counter() - t0
    hits = pts[hit]
    depths = np.linalg.norm(hits - spec.origin, axis=1) if len(hits) else np.zeros(0)
    out = Path(args.out)
    pio.write_ply(hits, out)
    print(f"hits {len(hits)} mean_depth {depths.mean() if len(depths) else float('nan'):.3f} m "
          f"rays {len(pattern)} time {elapsed:.3f} s")
    if args.manifest_dir:
        write_run_manifest(
            Path(args.manifest_dir), "scan",
            {"model": args.model, "sensor": args.sensor, "distance_m": args.distance,
             "heading_deg": args.heading},
            [args.model], [out], {"scan": elapsed},
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# rc / cf
# ---------------------------------------------------------------------------


def _run_ppcg(args, mode: str) -> int:
    spec = _sensor(args)
    lib = _library(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = pio.load_manifest(args.manifest)
    cfg = PpcgConfig(
        rc_max_points_gate=args.gate,
        cf_relocation_distance_range=tuple(args.range),
        cf_min_points=args.min_points,
        seed=args.seed,
    )

    def process(entry):
        t0 = time.perf_counter()
        frame = manifest.load_frame(entry)
        boxes, confs = pio.read_labels(Path(args.labels) / f"{entry.id}.txt")
        written = []
        if mode == "rc":
            out_frame, psets = rc_ppcg_frame(frame, boxes, lib, spec, cfg)
            pio.write_point_bin(out_frame, out_dir / f"{entry.id}.bin")
            pio.write_labels(boxes, out_dir / f"{entry.id}.txt", confidences=confs)
            written.append(out_dir / f"{entry.id}.bin")
        else:
            rng = frame_rng(cfg.seed, frame.id, salt=1)
            _, psets = cf_ppcg_frame(frame, boxes, lib, spec, cfg, rng)
            for k, pset in enumerate(psets):
                if len(pset) == 0:
                    continue
                sample = pio.Frame(
                    id=f"{entry.id}__cf{k}", points=pset.points,
                    intensities=np.full(len(pset), pset.intensity),
                    sensor_id=entry.sensor_id,
                )
                pio.write_point_bin(sample, out_dir / f"{sample.id}.bin")
                pio.write_labels([boxes[k]], out_dir / f"{sample.id}.txt", confidences=[confs[k]])
                written.append(out_dir / f"{sample.id}.bin")
        (out_dir / f"{entry.id}.sidecar.json").write_text(
            json.dumps([p.sidecar_record() for p in psets], indent=2) + "\n"
        )
        return time.perf_counter() - t0, written

    times = []
    outputs = []
    skipped = []
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        futures = [(e.id, pool.submit(process, e)) for e in manifest.entries]
        for fid, fut in futures:
            try:
                dt, written = fut.result()
                times.append(dt)
                outputs.extend(written)
            except (PseudoscanError, OSError) as e:
                print(f"frame {fid}: skipped: {e}", file=sys.stderr)
                skipped.append(fid)

    timings = {
        "frames": len(times),
        "mean_per_frame": float(np.mean(times)) if times else 0.0,
        "p95_per_frame": float(np.percentile(times, 95)) if times else 0.0,
    }
    write_run_manifest(
        out_dir, mode,
        {"manifest": str(args.manifest), "labels": str(args.labels),
         "sensor": args.sensor, "kind": args.kind, "seed": args.seed,
         "gate": args.gate, "range": list(args.range), "skipped": skipped},
        [args.manifest], outputs, timings,
    )
    print(f"{mode}: {len(times)} frames done, {len(skipped)} skipped; "
          f"mean {timings['mean_per_frame']:.3f} s/frame, p95 {timings['p95_per_frame']:.3f} s")
    return EXIT_PARTIAL if skipped else EXIT_OK


def cmd_rc(args) -> int:
    return _run_ppcg(args, "rc")


def cmd_cf(args) -> int:
    return _run_ppcg(args, "cf")


# ---------------------------------------------------------------------------
# ptsn
# ---------------------------------------------------------------------------


def _detector_from_args(args):
    if args.detector == "synthetic":
        mean = MeanSize(*_parse_triplet(args.source_mean))
        return make_synthetic_detector(mean, jitter=args.jitter, seed=args.seed)
    if args.detector == "replay":
        if not args.replay:
            raise PseudoscanError("--replay PATH is required with --detector replay")
        return make_replay_detector(args.replay)
    raise PseudoscanError(f"unknown detector {args.detector!r}")


def cmd_ptsn(args) -> int:
    frames = _load_frames(args.manifest)
    detector = _detector_from_args(args)
    if args.est_stats:
        est = estimate_mean_from_stats(args.est_stats)
    elif args.est_mean:
        est = MeanSize(*_parse_triplet(args.est_mean))
    else:
        raise PseudoscanError("need --est-mean or --est-stats")
    cfg = PtsnConfig(
        estimated_mean=est,
        scale_grid=args.grid,
        metric=SizeMetric.VOLUME if args.metric == "volume" else SizeMetric.DIMS_L2,
        confidence_floor=args.confidence_floor,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        s_hat, curve = ptsn_search(detector, frames, cfg)
    except AllFramesEmpty as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    elapsed = time.perf_counter() - t0
    write_curve_csv(curve, out_dir / "curve.csv")
    (out_dir / "scale.json").write_text(json.dumps({"scale": s_hat}, indent=2) + "\n")
    write_run_manifest(
        out_dir, "ptsn",
        {"manifest": str(args.manifest), "detector": args.detector,
         "metric": cfg.metric.value, "est_mean": [est.l, est.w, est.h],
         "grid": [float(args.grid[0]), float(args.grid[-1]), len(args.grid)],
         "confidence_floor": cfg.confidence_floor, "seed": args.seed},
        [args.manifest], [out_dir / "curve.csv", out_dir / "scale.json"],
        {"search": elapsed},
    )
    print(f"scale {s_hat:.4f} ({len(curve)} grid points, {elapsed:.2f} s)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# iterate
# ---------------------------------------------------------------------------


def cmd_iterate(args) -> int:
    cfg_doc = json.loads(Path(args.config).read_text())
    for key in ("manifest", "library", "sensor", "detector", "out_dir"):
        if key not in cfg_doc:
            print(f"error: config is missing {key!r}", file=sys.stderr)
            return EXIT_CONFIG
    out_dir = Path(args.out or cfg_doc["out_dir"])
    seed = args.seed if args.seed is not None else int(cfg_doc.get("seed", 0))
    iterations = args.iterations or int(cfg_doc.get("iterations", 1))

    frames = _load_frames(cfg_doc["manifest"])
    lib = build_library(cfg_doc["library"], LibraryKind(cfg_doc.get("library_kind", "CAD")), LibraryFilter())
    spec = sensor_by_name(cfg_doc["sensor"], cfg_doc.get("sensors_file") or os.environ.get(ENV_SENSORS))

    det_doc = cfg_doc["detector"]
    if det_doc["type"] == "synthetic":
        mean = MeanSize(*det_doc["source_mean"])
        base = make_synthetic_detector(mean, jitter=float(det_doc.get("jitter", 0.0)), seed=seed)
        detector_provider = lambda i: base
    elif det_doc["type"] == "replay":
        pattern = det_doc["path_pattern"]
        detector_provider = lambda i: make_replay_detector(pattern.format(i=i + 1))
    else:
        print(f"error: unknown detector type {det_doc['type']!r}", file=sys.stderr)
        return EXIT_CONFIG

    if "est_stats" in cfg_doc:
        est = estimate_mean_from_stats(cfg_doc["est_stats"])
    else:
        est = MeanSize(*cfg_doc["est_mean"])
    grid_doc = cfg_doc.get("grid")
    grid = _parse_grid("{}:{}:{}".format(*grid_doc)) if grid_doc else None
    ptsn_kwargs = dict(
        estimated_mean=est,
        metric=SizeMetric(cfg_doc.get("metric", "DIMS_L2")),
        confidence_floor=float(cfg_doc.get("confidence_floor", 0.6)),
    )
    if grid is not None:
        ptsn_kwargs["scale_grid"] = grid
    ptsn_cfg = PtsnConfig(**ptsn_kwargs)
    ppcg_doc = cfg_doc.get("ppcg", {})
    ppcg_cfg = PpcgConfig(
        rc_max_points_gate=int(ppcg_doc.get("rc_max_points_gate", 300)),
        cf_relocation_distance_range=tuple(ppcg_doc.get("cf_relocation_distance_range", (30.0, 60.0))),
        cf_min_points=int(ppcg_doc.get("cf_min_points", 5)),
        seed=seed,
    )

    t0 = time.perf_counter()
    artifacts = iterate_pipeline(
        detector_provider, frames, lib, spec, ptsn_cfg, ppcg_cfg, out_dir, iterations=iterations
    )
    write_run_manifest(
        out_dir, "iterate",
        {"config": str(args.config), "iterations": iterations, "seed": seed},
        [args.config, cfg_doc["manifest"]],
        [a.directory for a in artifacts],
        {"total": time.perf_counter() - t0},
    )
    for a in artifacts:
        print(f"{a.directory}: scale {a.scale:.4f}, {a.n_frames} frames")
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def _validate_file(path: Path) -> str | None:
    try:
        suffix = path.suffix.lower()
        if suffix == ".bin":
            pio.read_point_bin(path)
        elif suffix == ".txt":
            pio.read_labels(path)
        elif suffix == ".ply":
            pio.read_ply_points(path)
        elif suffix == ".json":
            doc = json.loads(path.read_text())
            if isinstance(doc, dict) and "frames" in doc:
                pio.load_manifest(path)
            elif isinstance(doc, list) and doc and "beams" in doc[0]:
                from .sensor import load_sensor_library

                load_sensor_library(path)
        elif suffix == ".jsonl":
            from .ptsn import ReplayDetector

            ReplayDetector(path)
        else:
            return None
    except (PseudoscanError, ValueError, KeyError) as e:
        return str(e)
    return None


def cmd_validate(args) -> int:
    paths = []
    for p in args.paths:
        p = Path(p)
        if p.is_dir():
            paths.extend(sorted(q for q in p.rglob("*") if q.is_file()))
        else:
            paths.append(p)
    failures = 0
    for p in paths:
        if not p.exists():
            print(f"{p}: missing")
            failures += 1
            continue
        err = _validate_file(p)
        if err is not None:
            print(f"{p}: INVALID: {err}")
            failures += 1
    print(f"validated {len(paths)} files, {failures} invalid")
    return EXIT_CONFIG if failures else EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def cmd_bench(args) -> int:
    if args.mesh:
        mesh, _ = canonicalize_mesh(load_mesh(args.mesh))
    else:
        mesh = sphere_50k(radius=1.0)
    bvh = build_bvh(mesh)
    rng = np.random.default_rng(args.seed)
    lo, hi = mesh.aabb
    center = (lo + hi) / 2.0
    radius = float(np.linalg.norm(hi - lo)) / 2.0
    origins = center + rng.normal(size=(args.rays, 3)) * radius * 2.0
    targets = center + rng.normal(size=(args.rays, 3)) * radius * 0.5
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    rays = [Ray(origins[i], dirs[i]) for i in range(args.rays)]
    t0 = time.perf_counter()
    bvh_hits = [cast_ray(bvh, mesh, r) for r in rays]
    t_bvh = time.perf_counter() - t0
    gathered = mesh.triangle_vertices()
    t0 = time.perf_counter()
    naive_hits = [cast_ray_naive(mesh, r, gathered) for r in rays]
    t_naive = time.perf_counter() - t0

    mismatches = sum(
        1
        for a, b in zip(bvh_hits, naive_hits)
        if (a is None) != (b is None) or (a is not None and abs(a.t - b.t) > 1e-9)
    )
    speedup = t_naive / t_bvh if t_bvh > 0 else math.inf
    print(f"triangles {mesh.n_triangles}  rays {args.rays}")
    print(f"bvh   {t_bvh:8.3f} s  ({1e6 * t_bvh / args.rays:7.1f} us/ray)")
    print(f"naive {t_naive:8.3f} s  ({1e6 * t_naive / args.rays:7.1f} us/ray)")
    print(f"speedup {speedup:.1f}x  mismatches {mismatches}")
    return EXIT_OK if mismatches == 0 else EXIT_CONFIG


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pseudoscan", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=0, help="rng seed (fixed default for reproducibility)")
        p.add_argument("--jobs", type=int, default=1, help="frame-level worker threads")
        p.add_argument("--sensors", default=None, help=f"sensor library JSON (or ${ENV_SENSORS})")

    p = sub.add_parser("scan", help="virtually scan a mesh at a distance, write PLY")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--sensor", required=True)
    p.add_argument("--distance", type=float, required=True, help="planar distance, meters")
    p.add_argument("--heading", type=float, default=0.0, help="degrees")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest-dir", default=None)
    p.set_defaults(func=cmd_scan)

    for name, helptext in (("rc", "ray-constrained pseudo points (replace interiors)"),
                           ("cf", "constraint-free pseudo points (far-range rescan samples)")):
        p = sub.add_parser(name, help=helptext)
        add_common(p)
        p.add_argument("--manifest", required=True)
        p.add_argument("--labels", required=True, help="directory of <frame_id>.txt label files")
        p.add_argument("--library", default=None, help=f"model library directory (or ${ENV_LIBRARY})")
        p.add_argument("--kind", choices=["CAD", "POINT"], default="CAD")
        p.add_argument("--sensor", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--gate", type=int, default=300, help="skip boxes with at least this many points")
        p.add_argument("--range", type=_parse_range_pair, default=(30.0, 60.0),
                       help="CF relocation distance range lo,hi meters")
        p.add_argument("--min-points", type=int, default=5, help="minimum CF hits before retry")
        p.set_defaults(func=cmd_rc if name == "rc" else cmd_cf)

    p = sub.add_parser("ptsn", help="post-training scale search")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--detector", choices=["synthetic", "replay"], required=True)
    p.add_argument("--replay", default=None, help="replay JSON-lines path")
    p.add_argument("--source-mean", default="4.66,2.08,1.73", help="synthetic detector mean dims l,w,h")
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--est-mean", default=None, help="estimated target mean dims l,w,h")
    p.add_argument("--est-stats", default=None, help="JSON stats file with mean_lwh_m or boxes_lwh_m")
    p.add_argument("--grid", type=_parse_grid, default=_parse_grid("0.80:1.40:0.01"))
    p.add_argument("--metric", choices=["dims", "volume"], default="dims")
    p.add_argument("--confidence-floor", type=float, default=0.6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ptsn)

    p = sub.add_parser("iterate", help="full loop: ptsn -> labels -> rc -> cf, per iteration")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--iterations", type=int, default=None, help="override config iterations")
    p.add_argument("--out", default=None, help="override config out_dir")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.set_defaults(func=cmd_iterate)

    p = sub.add_parser("validate", help="lint artifact files (bin/labels/ply/json)")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="BVH vs naive casting timings")
    p.add_argument("--mesh", default=None, help="mesh path (default: procedural 50k-triangle sphere)")
    p.add_argument("--rays", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    return ap


def _parse_range_pair(text: str) -> tuple[float, float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected lo,hi got {text!r}")
    return parts[0], parts[1]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PseudoscanError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

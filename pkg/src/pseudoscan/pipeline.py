"""End-to-end iteration loop: scale search -> pseudo labels -> RC/CF samples.

Each iteration writes a self-contained artifact directory. The "retrain the
detector" step is external to this package: with a replay detector the loop
expects a new replay file per iteration; the synthetic detector is simply
reused. Raw target frames are never emitted as training data, only the
RC-processed frames and the CF samples.

A RESUME manifest tracks completed stages so an interrupted run can pick up
where it stopped.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as pio
from .models import ModelLibrary
from .ppcg import PpcgConfig, cf_ppcg_frame, frame_rng, rc_ppcg_frame
from .ptsn import Detector, PtsnConfig, generate_pseudo_labels, ptsn_search
from .sensor import SensorSpec

STAGES = ("ptsn", "labels", "rc", "cf")


@dataclass
class IterationArtifacts:
    directory: Path
    scale: float
    n_frames: int


def write_curve_csv(curve, path) -> None:
    lines = ["s,l,w,h,volume,frames_used"]
    for s, m in curve:
        lines.append(f"{s},{m.l},{m.w},{m.h},{m.volume},{m.frames_used}")
    Path(path).write_text("\n".join(lines) + "\n")


def _resume_path(it_dir: Path) -> Path:
    return it_dir / "RESUME.json"


def _load_resume(it_dir: Path) -> dict:
    p = _resume_path(it_dir)
    if p.exists():
        return json.loads(p.read_text())
    return {"completed": []}

def _mark_done(it_dir: Path, stage: str, resume: dict) -> None:
    if stage not in resume["completed"]:
        resume["completed"].append(stage)
    tmp = _resume_path(it_dir).with_suffix(".tmp")
    tmp.write_text(json.dumps(resume, indent=2) + "\n")
    tmp.replace(_resume_path(it_dir))


def run_iteration(
    detector: Detector,
    frames: list[pio.Frame],
    lib: ModelLibrary,
    spec: SensorSpec,
    ptsn_cfg: PtsnConfig,
    ppcg_cfg: PpcgConfig,
    it_dir: Path,
) -> IterationArtifacts:
    """One pass of the loop, resumable per stage."""
    it_dir = Path(it_dir)
    (it_dir / "labels").mkdir(parents=True, exist_ok=True)
    (it_dir / "rc").mkdir(exist_ok=True)
    (it_dir / "cf").mkdir(exist_ok=True)
    resume = _load_resume(it_dir)
    timings = {}

    def stage_done(name: str) -> bool:
        return name in resume["completed"]

    # scale search
    scale_path = it_dir / "scale.json"
    if stage_done("ptsn"):
        s_hat = json.loads(scale_path.read_text())["scale"]
    else:
        t0 = time.perf_counter()
        s_hat, curve = ptsn_search(detector, frames, ptsn_cfg)
        write_curve_csv(curve, it_dir / "curve.csv")
        scale_path.write_text(json.dumps({
            "scale": s_hat,
            "metric": ptsn_cfg.metric.value,
            "estimated_mean": [ptsn_cfg.estimated_mean.l, ptsn_cfg.estimated_mean.w, ptsn_cfg.estimated_mean.h],
        }, indent=2) + "\n")
        timings["ptsn"] = time.perf_counter() - t0
        _mark_done(it_dir, "ptsn", resume)

    # pseudo labels
    if not stage_done("labels"):
        t0 = time.perf_counter()
        labels = generate_pseudo_labels(detector, frames, s_hat, ptsn_cfg)
        for fid, det in labels.items():
            pio.write_labels(det.boxes, it_dir / "labels" / f"{fid}.txt", confidences=det.confidences)
        timings["labels"] = time.perf_counter() - t0
        _mark_done(it_dir, "labels", resume)

    # RC samples: frames with interiors replaced, plus the boxes
    if not stage_done("rc"):
        t0 = time.perf_counter()
        for frame in frames:
            boxes, confs = pio.read_labels(it_dir / "labels" / f"{frame.id}.txt")
            out_frame, psets = rc_ppcg_frame(frame, boxes, lib, spec, ppcg_cfg)
            pio.write_point_bin(out_frame, it_dir / "rc" / f"{frame.id}.bin")
            pio.write_labels(boxes, it_dir / "rc" / f"{frame.id}.txt", confidences=confs)
            (it_dir / "rc" / f"{frame.id}.sidecar.json").write_text(
                json.dumps([p.sidecar_record() for p in psets], indent=2) + "\n"
            )
        timings["rc"] = time.perf_counter() - t0
        _mark_done(it_dir, "rc", resume)

    # CF samples: one sparse far-range rescan per box, emitted standalone
    if not stage_done("cf"):
        t0 = time.perf_counter()
        for frame in frames:
            boxes, confs = pio.read_labels(it_dir / "labels" / f"{frame.id}.txt")
            rng = frame_rng(ppcg_cfg.seed, frame.id, salt=1)
            _, psets = cf_ppcg_frame(frame, boxes, lib, spec, ppcg_cfg, rng)
            records = []
            for k, pset in enumerate(psets):
                if len(pset) == 0:
                    records.append(pset.sidecar_record())
                    continue
                sample = pio.Frame(
                    id=f"{frame.id}__cf{k}",
                    points=pset.points,
                    intensities=np.full(len(pset), pset.intensity),
                    sensor_id=frame.sensor_id,
                )
                pio.write_point_bin(sample, it_dir / "cf" / f"{sample.id}.bin")
                pio.write_labels([boxes[k]], it_dir / "cf" / f"{sample.id}.txt", confidences=[confs[k]])
                records.append(pset.sidecar_record())
            (it_dir / "cf" / f"{frame.id}.sidecar.json").write_text(
                json.dumps(records, indent=2) + "\n"
            )
        timings["cf"] = time.perf_counter() - t0
        _mark_done(it_dir, "cf", resume)

    resume["timings"] = {**resume.get("timings", {}), **timings}
    _mark_done(it_dir, STAGES[-1], resume)
    return IterationArtifacts(directory=it_dir, scale=float(s_hat), n_frames=len(frames))


def iterate_pipeline(
    detector_provider,
    frames: list[pio.Frame],
    lib: ModelLibrary,
    spec: SensorSpec,
    ptsn_cfg: PtsnConfig,
    ppcg_cfg: PpcgConfig,
    out_dir,
    iterations: int = 1,
) -> list[IterationArtifacts]:
    """Run ``iterations`` passes; ``detector_provider(i)`` supplies the
    detector for iteration i (0-based)."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for i in range(iterations):
        it_dir = out_dir / f"iter_{i + 1:02d}"
        artifacts.append(
            run_iteration(detector_provider(i), frames, lib, spec, ptsn_cfg, ppcg_cfg, it_dir)
        )
    return artifacts

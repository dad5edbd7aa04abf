import json
from dataclasses import dataclass, field

import numpy as np
import pytest

from pseudoscan import io as pio
from pseudoscan.pipeline import iterate_pipeline, run_iteration
from pseudoscan.ppcg import PpcgConfig
from pseudoscan.ptsn import MeanSize, PtsnConfig, make_synthetic_detector


@dataclass
class CountingDetector:
    inner: object
    calls: list = field(default_factory=list)

    def detect(self, frame, scale=1.0):
        self.calls.append((frame.id, scale))
        return self.inner.detect(frame, scale)


@pytest.fixture()
def setup(toy_ds, cad_lib, toy_sensor):
    manifest = pio.load_manifest(toy_ds.manifest_path)
    frames = [manifest.load_frame(e) for e in manifest.entries]
    ptsn_cfg = PtsnConfig(
        estimated_mean=MeanSize(3.89, 1.62, 1.53),
        scale_grid=np.round(np.arange(1.0, 1.31, 0.05), 10),
    )
    ppcg_cfg = PpcgConfig(cf_relocation_distance_range=(25.0, 40.0), cf_min_points=1, seed=3)
    det = make_synthetic_detector(MeanSize(4.66, 2.08, 1.73), jitter=0.0, seed=3)
    return frames, ptsn_cfg, ppcg_cfg, det


class TestIterate:
    def test_smoke_artifacts(self, setup, cad_lib, toy_sensor, tmp_path):
        frames, ptsn_cfg, ppcg_cfg, det = setup
        arts = iterate_pipeline(lambda i: det, frames, cad_lib, toy_sensor,
                                ptsn_cfg, ppcg_cfg, tmp_path / "run", iterations=1)
        assert len(arts) == 1
        it = arts[0].directory
        assert (it / "scale.json").exists()
        assert (it / "curve.csv").exists()
        for f in frames:
            assert (it / "labels" / f"{f.id}.txt").exists()
            assert (it / "rc" / f"{f.id}.bin").exists()
            assert (it / "rc" / f"{f.id}.sidecar.json").exists()
            assert (it / "cf" / f"{f.id}.sidecar.json").exists()
        # raw target frames are never copied through as training data: every
        # emitted cloud is either an rc-processed frame or a cf sample
        assert all(p.parent.name in ("rc", "cf") for p in it.rglob("*.bin"))

    def test_two_iterations(self, setup, cad_lib, toy_sensor, tmp_path):
        frames, ptsn_cfg, ppcg_cfg, det = setup
        arts = iterate_pipeline(lambda i: det, frames, cad_lib, toy_sensor,
                                ptsn_cfg, ppcg_cfg, tmp_path / "run", iterations=2)
        assert [a.directory.name for a in arts] == ["iter_01", "iter_02"]
        for a in arts:
            assert (a.directory / "RESUME.json").exists()

    def test_resume_skips_completed_stages(self, setup, cad_lib, toy_sensor, tmp_path):
        frames, ptsn_cfg, ppcg_cfg, det = setup
        it_dir = tmp_path / "run" / "iter_01"
        run_iteration(det, frames, cad_lib, toy_sensor, ptsn_cfg, ppcg_cfg, it_dir)
        resume = json.loads((it_dir / "RESUME.json").read_text())
        assert set(resume["completed"]) == {"ptsn", "labels", "rc", "cf"}

        # wipe the cf stage only; resume must redo cf without touching ptsn
        resume["completed"] = ["ptsn", "labels", "rc"]
        (it_dir / "RESUME.json").write_text(json.dumps(resume))
        for p in (it_dir / "cf").iterdir():
            p.unlink()
        counter = CountingDetector(det)
        scale_before = (it_dir / "scale.json").read_text()
        run_iteration(counter, frames, cad_lib, toy_sensor, ptsn_cfg, ppcg_cfg, it_dir)
        assert counter.calls == []  # detector untouched: ptsn + labels resumed
        assert (it_dir / "scale.json").read_text() == scale_before
        assert any((it_dir / "cf").iterdir())

    def test_same_seed_byte_identical(self, setup, cad_lib, toy_sensor, tmp_path):
        frames, ptsn_cfg, ppcg_cfg, det = setup
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            iterate_pipeline(lambda i: det, frames, cad_lib, toy_sensor,
                             ptsn_cfg, ppcg_cfg, out, iterations=1)
        files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.suffix in (".bin", ".txt", ".csv"))
        files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.suffix in (".bin", ".txt", ".csv"))
        assert files_a == files_b and files_a
        for rel in files_a:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

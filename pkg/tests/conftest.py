import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pseudoscan.geom import build_bvh
from pseudoscan.meshgen import sphere_50k, uv_sphere
from pseudoscan.models import LibraryKind, build_library
from pseudoscan.sensor import SensorSpec
from pseudoscan.toydata import make_toy_dataset

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.data_too_large],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def sphere_mesh():
    return sphere_50k(radius=1.0)


@pytest.fixture(scope="session")
def sphere_bvh(sphere_mesh):
    return build_bvh(sphere_mesh)


@pytest.fixture(scope="session")
def small_sphere():
    return uv_sphere(radius=1.0, n_lat=24, n_lon=18)


@pytest.fixture(scope="session")
def toy_sensor():
    return SensorSpec(
        name="toy",
        beams=24,
        elevation_min=math.radians(-12.0),
        elevation_max=math.radians(2.0),
        points_per_beam=360,
        origin=np.array([0.0, 0.0, 1.2]),
    )


@pytest.fixture(scope="session")
def toy_ds(tmp_path_factory):
    return make_toy_dataset(tmp_path_factory.mktemp("toyds"), n_frames=5, boxes_per_frame=2, seed=11)


@pytest.fixture(scope="session")
def cad_lib(toy_ds):
    return build_library(toy_ds.cad_library, LibraryKind.CAD)


@pytest.fixture(scope="session")
def point_lib(toy_ds):
    return build_library(toy_ds.point_library, LibraryKind.POINT)

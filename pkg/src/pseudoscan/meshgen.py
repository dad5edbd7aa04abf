"""Procedural test meshes.

Real CAD assets are licensed and not shipped; these generators produce
watertight stand-ins (spheres, boxes, simple car hulls) used by the test
suite, the benchmark command, and the toy dataset scripts. All meshes come
out in canonical pose: length along +X, centered in X/Y, base at z = 0.
"""

from __future__ import annotations

import numpy as np

from .geom import TriangleMesh


def uv_sphere(radius: float = 1.0, n_lat: int = 32, n_lon: int = 24) -> TriangleMesh:
    """Lat-long sphere with 2 * n_lon * (n_lat - 1) triangles.

    ``n_lat`` counts latitude bands (>= 2), ``n_lon`` longitude slices (>= 3).
    Center sits at (0, 0, radius) so the base touches z = 0.
    """
    if n_lat < 2 or n_lon < 3:
        raise ValueError("need n_lat >= 2 and n_lon >= 3")
    verts = [(0.0, 0.0, 2.0 * radius)]  # north pole (top)
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat  # polar angle from +Z
        z = radius * (1.0 + np.cos(theta))
        r = radius * np.sin(theta)
        for j in range(n_lon):
            phi = 2.0 * np.pi * j / n_lon
            verts.append((r * np.cos(phi), r * np.sin(phi), z))
    verts.append((0.0, 0.0, 0.0))  # south pole (base)
    south = len(verts) - 1

    def ring(i: int, j: int) -> int:
        return 1 + (i - 1) * n_lon + (j % n_lon)

    tris = []
    for j in range(n_lon):
        tris.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append((a, c, b))
            tris.append((b, c, d))
    for j in range(n_lon):
        tris.append((south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)))
    return TriangleMesh(np.array(verts), np.array(tris))


def sphere_50k(radius: float = 1.0) -> TriangleMesh:
    """The 50,000-triangle sphere the BVH benchmark runs on.

    Even slice count keeps the vertex cloud symmetric in X/Y, so the
    axis-aligned bounds center coincides with the analytic sphere center.
    """
    return uv_sphere(radius=radius, n_lat=251, n_lon=100)


def box_mesh(l: float, w: float, h: float) -> TriangleMesh:
    """Axis-aligned closed box, 12 triangles, base at z = 0."""
    hx, hy = l / 2.0, w / 2.0
    v = np.array(
        [
            [-hx, -hy, 0.0], [hx, -hy, 0.0], [hx, hy, 0.0], [-hx, hy, 0.0],
            [-hx, -hy, h], [hx, -hy, h], [hx, hy, h], [-hx, hy, h],
        ]
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],           # bottom
            [4, 5, 6], [4, 6, 7],           # top
            [0, 1, 5], [0, 5, 4],           # -y
            [2, 3, 7], [2, 7, 6],           # +y
            [1, 2, 6], [1, 6, 5],           # +x
            [3, 0, 4], [3, 4, 7],           # -x
        ]
    )
    return TriangleMesh(v, f)


def car_mesh(l: float = 4.5, w: float = 1.8, h: float = 1.5) -> TriangleMesh:
    """Two-box car silhouette: body plus a narrower, shorter cabin on top."""
    body_h = 0.55 * h
    body = box_mesh(l, w, body_h)
    cabin = box_mesh(0.55 * l, 0.9 * w, h - body_h)
    cv = cabin.vertices.copy()
    cv[:, 0] -= 0.05 * l   # cabin sits slightly rearward
    cv[:, 2] += body_h
    verts = np.vstack([body.vertices, cv])
    tris = np.vstack([body.triangles, cabin.triangles + len(body.vertices)])
    return TriangleMesh(verts, tris)

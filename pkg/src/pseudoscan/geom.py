"""Core 3D geometry: boxes, rays, triangle meshes, and a BVH ray-casting kernel.

Everything works in meters and radians on float64 numpy arrays. Points are
plain ``(N, 3)`` arrays; single points are ``(3,)`` arrays. All types are
immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMesh, NonPositiveScale

# Möller-Trumbore determinant cutoff for near-parallel rays, and the forward
# hit cutoff that guards against self-intersection in meter-scale scenes.
DET_EPS = 1e-12
T_MIN = 1e-9

# Triangles with area at or below this are treated as degenerate slivers.
DEGENERATE_AREA = 1e-12

TAU = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]; exact no-op for values already in range."""
    a = float(a)
    if -math.pi < a <= math.pi:
        return a
    r = (a + math.pi) % TAU - math.pi
    if r <= -math.pi:
        r += TAU
    return r


def as_point(p) -> np.ndarray:
    return np.asarray(p, dtype=np.float64).reshape(3)


def as_points(p) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 3)
    return arr.reshape(-1, 3)


@dataclass(frozen=True)
class Ray:
    """Ray with a unit direction; ``|direction| = 1`` within 1e-12."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", as_point(self.origin))
        d = as_point(self.direction)
        n = float(np.linalg.norm(d))
        if not math.isfinite(n) or abs(n - 1.0) > 1e-12:
            raise ValueError(f"ray direction must be unit length, got |d|={n!r}")
        object.__setattr__(self, "direction", d)

    @staticmethod
    def through(origin, target) -> "Ray":
        """Ray from ``origin`` toward ``target`` (normalizes the difference)."""
        o = as_point(origin)
        d = as_point(target) - o
        n = float(np.linalg.norm(d))
        if n == 0.0:
            raise ValueError("ray target coincides with origin")
        return Ray(o, d / n)


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D bounding box: center, dimensions, heading about +Z.

    ``heading`` is expected in (-pi, pi]; it is stored exactly as given so
    that scale round-trips keep it bit-identical. Use :func:`wrap_angle` at
    parse boundaries.
    """

    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    heading: float

    def __post_init__(self):
        for name in ("l", "w", "h"):
            v = getattr(self, name)
            if not (v > 0.0) or not math.isfinite(v):
                raise ValueError(f"box dimension {name} must be positive, got {v!r}")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.l, self.w, self.h], dtype=np.float64)

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    def corners(self) -> np.ndarray:
        """The 8 corners, shape (8, 3), in world coordinates."""
        sx, sy, sz = self.l / 2.0, self.w / 2.0, self.h / 2.0
        local = np.array(
            [
                [dx, dy, dz]
                for dx in (-sx, sx)
                for dy in (-sy, sy)
                for dz in (-sz, sz)
            ],
            dtype=np.float64,
        )
        c, s = math.cos(self.heading), math.sin(self.heading)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return local @ rot.T + self.center


@dataclass(frozen=True)
class Triangle:
    v0: np.ndarray
    v1: np.ndarray
    v2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v0", as_point(self.v0))
        object.__setattr__(self, "v1", as_point(self.v1))
        object.__setattr__(self, "v2", as_point(self.v2))

    @property
    def area(self) -> float:
        return 0.5 * float(np.linalg.norm(np.cross(self.v1 - self.v0, self.v2 - self.v0)))


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle soup. ``vertices`` (V, 3) float64, ``triangles`` (T, 3) int."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.vertices) == 0:
            z = np.zeros(3)
            return z, z
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangle_vertices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gathered corner arrays (T, 3) each."""
        v = self.vertices
        t = self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def triangle_areas(self) -> np.ndarray:
        a, b, c = self.triangle_vertices()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def translated(self, offset) -> "TriangleMesh":
        return TriangleMesh(self.vertices + as_point(offset), self.triangles)


def clean_mesh(mesh: TriangleMesh) -> tuple[TriangleMesh, int]:
    """Drop degenerate triangles (area <= 1e-12 m^2); returns (mesh, n_dropped)."""
    if mesh.n_triangles == 0:
        return mesh, 0
    keep = mesh.triangle_areas() > DEGENERATE_AREA
    dropped = int((~keep).sum())
    if dropped == 0:
        return mesh, 0
    return TriangleMesh(mesh.vertices, mesh.triangles[keep]), dropped


@dataclass(frozen=True)
class RayHit:
    t: float
    point: np.ndarray
    triangle: int
    u: float
    v: float


def _mt_core(origin, direction, v0, v1, v2):
    """Vectorized Möller-Trumbore over broadcastable (..., 3) inputs.

    Returns (hit, t, u, v). ``direction`` need not be unit length; ``t`` is
    then in units of |direction|, which is what the posed-model ray transform
    relies on.
    """
    e1 = v1 - v0
    e2 = v2 - v0
    pvec = np.cross(direction, e2)
    det = np.sum(e1 * pvec, axis=-1)
    near_parallel = np.abs(det) < DET_EPS
    # avoid divide warnings; near-parallel lanes are masked out below
    safe_det = np.where(near_parallel, 1.0, det)
    inv_det = 1.0 / safe_det
    tvec = origin - v0
    u = np.sum(tvec * pvec, axis=-1) * inv_det
    qvec = np.cross(tvec, e1)
    v = np.sum(direction * qvec, axis=-1) * inv_det
    t = np.sum(e2 * qvec, axis=-1) * inv_det
    hit = (
        ~near_parallel
        & (u >= 0.0)
        & (v >= 0.0)
        & (u + v <= 1.0)
        & (t >= T_MIN)
    )
    return hit, t, u, v


def intersect_ray_triangles(origin, direction, v0, v1, v2):
    """One ray against (T, 3) corner arrays. Returns (hit, t, u, v) arrays."""
    o = as_point(origin)
    d = as_point(direction)
    return _mt_core(o, d, np.asarray(v0), np.asarray(v1), np.asarray(v2))


def ray_triangle_intersect(ray: Ray, tri: Triangle) -> RayHit | None:
    """Nearest forward intersection of one ray with one triangle, or None."""
    hit, t, u, v = _mt_core(ray.origin, ray.direction, tri.v0, tri.v1, tri.v2)
    if not bool(hit):
        return None
    t = float(t)
    return RayHit(t=t, point=ray.origin + t * ray.direction, triangle=0, u=float(u), v=float(v))


def _pick_nearest(hit, t, candidates):
    """Min-t hit among ``candidates`` (original triangle ids); ties break to
    the lowest triangle id."""
    if not np.any(hit):
        return None
    ts = np.where(hit, t, np.inf)
    tmin = ts.min()
    tied = np.nonzero(ts == tmin)[0]
    k = tied[np.argmin(candidates[tied])]
    return float(ts[k]), int(candidates[k]), int(k)


# ---------------------------------------------------------------------------
# BVH
# ---------------------------------------------------------------------------

LEAF_SIZE = 8


@dataclass(frozen=True)
class Bvh:
    """Flat median-split BVH. Leaves reference ranges of ``tri_order``.

    ``left[i] == -1`` marks a leaf; leaves own ``tri_order[start:start+count]``.
    Builds are deterministic for a fixed mesh. Read-only after build:
    concurrent casts need no locking.
    """

    bounds_min: np.ndarray     # (M, 3)
    bounds_max: np.ndarray     # (M, 3)
    left: np.ndarray           # (M,) child index or -1
    right: np.ndarray          # (M,)
    start: np.ndarray          # (M,) leaf range start into tri_order
    count: np.ndarray          # (M,) leaf triangle count (0 for inner nodes)
    tri_order: np.ndarray      # (T,) original triangle indices, leaf-grouped
    # packed triangle corners in tri_order, for cache-friendly leaf tests
    v0: np.ndarray = field(repr=False, default=None)
    v1: np.ndarray = field(repr=False, default=None)
    v2: np.ndarray = field(repr=False, default=None)
    n_source_triangles: int = 0
    # plain-Python mirrors of the node arrays; traversal is a Python loop and
    # scalar tuple reads are several times cheaper than numpy row indexing
    _nodes: list = field(repr=False, compare=False, default=None)

    @property
    def n_nodes(self) -> int:
        return len(self.left)


def build_bvh(mesh: TriangleMesh) -> Bvh:
    """Build a BVH over the mesh's non-degenerate triangles.

    Median split on the longest axis of the node's centroid extent, leaf size
    <= 8. Raises :class:`EmptyMesh` when no triangle survives cleaning.
    """
    areas = mesh.triangle_areas() if mesh.n_triangles else np.zeros(0)
    alive = np.nonzero(areas > DEGENERATE_AREA)[0]
    if len(alive) == 0:
        raise EmptyMesh("mesh has no non-degenerate triangles")

    a, b, c = mesh.triangle_vertices()
    a, b, c = a[alive], b[alive], c[alive]
    tri_min = np.minimum(np.minimum(a, b), c)
    tri_max = np.maximum(np.maximum(a, b), c)
    centroids = (tri_min + tri_max) * 0.5

    order = np.arange(len(alive))
    bounds_min, bounds_max = [], []
    lefts, rights, starts, counts = [], [], [], []

    def new_node(ids):
        node = len(lefts)
        bounds_min.append(tri_min[ids].min(axis=0))
        bounds_max.append(tri_max[ids].max(axis=0))
        lefts.append(-1)
        rights.append(-1)
        starts.append(0)
        counts.append(0)
        return node

    # (node index, member ids, write offset into tri_order)
    out_order = np.empty(len(alive), dtype=np.int64)
    stack = [(new_node(order), order, 0)]
    while stack:
        node, ids, offset = stack.pop()
        if len(ids) <= LEAF_SIZE:
            starts[node] = offset
            counts[node] = len(ids)
            out_order[offset : offset + len(ids)] = ids
            continue
        cen = centroids[ids]
        extent = cen.max(axis=0) - cen.min(axis=0)
        axis = int(np.argmax(extent))
        perm = np.argsort(cen[:, axis], kind="stable")
        ids = ids[perm]
        mid = len(ids) // 2
        li = new_node(ids[:mid])
        ri = new_node(ids[mid:])
        lefts[node] = li
        rights[node] = ri
        # push right first so the left subtree is processed (and numbered) first
        stack.append((ri, ids[mid:], offset + mid))
        stack.append((li, ids[:mid], offset))

    tri_order = alive[out_order]
    av, bv, cv = mesh.triangle_vertices()
    bmin = np.asarray(bounds_min)
    bmax = np.asarray(bounds_max)
    nodes = [
        (
            float(bmin[i, 0]), float(bmin[i, 1]), float(bmin[i, 2]),
            float(bmax[i, 0]), float(bmax[i, 1]), float(bmax[i, 2]),
            lefts[i], rights[i], starts[i], counts[i],
        )
        for i in range(len(lefts))
    ]
    return Bvh(
        bounds_min=bmin,
        bounds_max=bmax,
        left=np.asarray(lefts, dtype=np.int64),
        right=np.asarray(rights, dtype=np.int64),
        start=np.asarray(starts, dtype=np.int64),
        count=np.asarray(counts, dtype=np.int64),
        tri_order=tri_order,
        v0=np.ascontiguousarray(av[tri_order]),
        v1=np.ascontiguousarray(bv[tri_order]),
        v2=np.ascontiguousarray(cv[tri_order]),
        n_source_triangles=mesh.n_triangles,
        _nodes=nodes,
    )


@dataclass
class CastStats:
    nodes_visited: int = 0
    triangle_tests: int = 0


def _slab_entry(node, ox, oy, oz, dx, dy, dz, t_best):
    """Scalar ray-AABB slab test; returns entry t, or None on a miss.

    Zero direction components are handled explicitly: such an axis either
    rejects (origin outside the slab) or imposes no constraint.
    """
    tnear = 0.0
    tfar = t_best
    for o, d, lo, hi in ((ox, dx, node[0], node[3]),
                         (oy, dy, node[1], node[4]),
                         (oz, dz, node[2], node[5])):
        if d == 0.0:
            if o < lo or o > hi:
                return None
            continue
        inv = 1.0 / d
        t0 = (lo - o) * inv
        t1 = (hi - o) * inv
        if t0 > t1:
            t0, t1 = t1, t0
        if t0 > tnear:
            tnear = t0
        if t1 < tfar:
            tfar = t1
        if tnear > tfar:
            return None
    return tnear


def _traverse(bvh: Bvh, origin, direction, stats: CastStats | None):
    nodes = bvh._nodes
    ox, oy, oz = float(origin[0]), float(origin[1]), float(origin[2])
    dx, dy, dz = float(direction[0]), float(direction[1]), float(direction[2])
    best_t = np.inf
    best_tri = -1
    best_uv = (0.0, 0.0)
    troot = _slab_entry(nodes[0], ox, oy, oz, dx, dy, dz, best_t)
    if troot is None:
        return None
    stack = [(troot, 0)]
    while stack:
        tbox, ni = stack.pop()
        if tbox > best_t:
            continue
        if stats is not None:
            stats.nodes_visited += 1
        node = nodes[ni]
        li = node[6]
        if li < 0:
            s, cnt = node[8], node[9]
            sl = slice(s, s + cnt)
            hit, t, u, v = _mt_core(origin, direction, bvh.v0[sl], bvh.v1[sl], bvh.v2[sl])
            if stats is not None:
                stats.triangle_tests += cnt
            found = _pick_nearest(hit, t, bvh.tri_order[sl])
            if found is not None and (
                found[0] < best_t or (found[0] == best_t and found[1] < best_tri)
            ):
                best_t, best_tri, k = found
                best_uv = (float(u[k]), float(v[k]))
            continue
        ri = node[7]
        tl = _slab_entry(nodes[li], ox, oy, oz, dx, dy, dz, best_t)
        tr = _slab_entry(nodes[ri], ox, oy, oz, dx, dy, dz, best_t)
        # push the farther child first so the nearer one is explored first
        if tl is not None and tr is not None:
            if tl <= tr:
                stack.append((tr, ri))
                stack.append((tl, li))
            else:
                stack.append((tl, li))
                stack.append((tr, ri))
        elif tl is not None:
            stack.append((tl, li))
        elif tr is not None:
            stack.append((tr, ri))
    if best_tri < 0:
        return None
    return best_t, best_tri, best_uv


def cast_ray(bvh: Bvh, mesh: TriangleMesh, ray: Ray) -> RayHit | None:
    """Nearest forward hit of ``ray`` against the mesh via its BVH."""
    hit, _ = cast_ray_counted(bvh, mesh, ray)
    return hit


def cast_ray_counted(bvh: Bvh, mesh: TriangleMesh, ray: Ray) -> tuple[RayHit | None, CastStats]:
    """Like :func:`cast_ray` but also reports traversal work done."""
    if bvh.n_source_triangles != mesh.n_triangles:
        raise ValueError("bvh was not built from this mesh")
    stats = CastStats()
    found = _traverse(bvh, ray.origin, ray.direction, stats)
    if found is None:
        return None, stats
    t, tri, (u, v) = found
    return RayHit(t=t, point=ray.origin + t * ray.direction, triangle=tri, u=u, v=v), stats


def cast_rays(bvh: Bvh, mesh: TriangleMesh, origin, directions) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch cast from one origin. Returns (hit_mask (N,), t (N,), points (N, 3)).

    Rays that miss the root box are culled in one vectorized pass; survivors
    run the usual traversal.
    """
    if bvh.n_source_triangles != mesh.n_triangles:
        raise ValueError("bvh was not built from this mesh")
    o = as_point(origin)
    d = as_points(directions)
    n = len(d)
    hit_mask = np.zeros(n, dtype=bool)
    t_out = np.full(n, np.inf)
    p_out = np.full((n, 3), np.nan)
    if n == 0:
        return hit_mask, t_out, p_out

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (bvh.bounds_min[0] - o) * inv
        t1 = (bvh.bounds_max[0] - o) * inv
    tnear = np.nanmax(np.minimum(t0, t1), axis=1)
    tfar = np.nanmin(np.maximum(t0, t1), axis=1)
    survivors = np.nonzero(tfar >= np.maximum(tnear, 0.0))[0]

    for i in survivors:
        found = _traverse(bvh, o, d[i], None)
        if found is not None:
            hit_mask[i] = True
            t_out[i] = found[0]
            p_out[i] = o + found[0] * d[i]
    return hit_mask, t_out, p_out


def cast_ray_naive(mesh: TriangleMesh, ray: Ray, gathered=None) -> RayHit | None:
    """All-triangle scan; the O(T) baseline the BVH must agree with.

    Callers scanning many rays should pass ``gathered=mesh.triangle_vertices()``
    once instead of re-gathering the corner arrays per ray.
    """
    if mesh.n_triangles == 0:
        return None
    v0, v1, v2 = gathered if gathered is not None else mesh.triangle_vertices()
    hit, t, u, v = _mt_core(ray.origin, ray.direction, v0, v1, v2)
    found = _pick_nearest(hit, t, np.arange(mesh.n_triangles))
    if found is None:
        return None
    tbest, tri, k = found
    return RayHit(t=tbest, point=ray.origin + tbest * ray.direction, triangle=tri, u=float(u[k]), v=float(v[k]))


# ---------------------------------------------------------------------------
# Box membership and scaling
# ---------------------------------------------------------------------------


def points_in_box(points, box: Box3D) -> np.ndarray:
    """Indices of points inside the oriented box; boundaries are inclusive."""
    p = as_points(points)
    if len(p) == 0:
        return np.zeros(0, dtype=np.int64)
    q = p - box.center
    c, s = math.cos(box.heading), math.sin(box.heading)
    # rotate by -heading into the box frame
    bx = c * q[:, 0] + s * q[:, 1]
    by = -s * q[:, 0] + c * q[:, 1]
    bz = q[:, 2]
    mask = (
        (np.abs(bx) <= box.l / 2.0)
        & (np.abs(by) <= box.w / 2.0)
        & (np.abs(bz) <= box.h / 2.0)
    )
    return np.nonzero(mask)[0]


def scale_frame(frame, s: float):
    """Multiply every point coordinate by ``s``; ids and intensities untouched."""
    if not (s > 0.0):
        raise NonPositiveScale(f"scale must be positive, got {s!r}")
    return dataclasses.replace(frame, points=frame.points * float(s))


def unscale_box(box: Box3D, s: float) -> Box3D:
    """Divide location and dimensions by ``s``; heading is copied bit-exactly."""
    if not (s > 0.0):
        raise NonPositiveScale(f"scale must be positive, got {s!r}")
    return Box3D(
        x=box.x / s,
        y=box.y / s,
        z=box.z / s,
        l=box.l / s,
        w=box.w / s,
        h=box.h / s,
        heading=box.heading,
    )

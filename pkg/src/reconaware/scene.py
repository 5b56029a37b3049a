"""Synthetic world: meshes on a table, depth rendering, table/object segmentation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import NoObject, NoPlane
from .geom import (LABEL_OBJECT, LABEL_TABLE, PointCloud, Pose6, TriMesh, apply_transform,
                   load_mesh)
from .sdf import CameraModel, TableBox, box_sdf, in_cone

RANSAC_THRESHOLD = 0.005
RANSAC_ITERATIONS = 200
CLUSTER_TOL = 0.015
MAX_TRAIN_POINTS = 300


@dataclass(frozen=True, eq=False)
class Scene:
    object_mesh: TriMesh | None
    object_pose: Pose6
    table: TableBox | None
    camera_pose: Pose6
    goal_pose: Pose6

    def object_world_mesh(self, T=None):
        """Object mesh in world coordinates, optionally moved by an extra world transform."""
        M = self.object_pose.matrix() if T is None else T @ self.object_pose.matrix()
        return self.object_mesh.transformed(M)


@dataclass(frozen=True, eq=False)
class DepthFrame:
    """Camera-frame points with the index of the beam ray that produced each."""

    cloud: PointCloud
    ray_index: np.ndarray
    T_world_cam: np.ndarray

    def __len__(self):
        return len(self.cloud)

    def world_points(self):
        return apply_transform(self.T_world_cam, self.cloud.points)


# ------------------------------------------------------------------ meshes


def box_mesh(extents):
    hx, hy, hz = np.asarray(extents, dtype=float) / 2.0
    v = np.array([[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    # vertex index = 4*ix + 2*iy + iz, outward winding
    f = [[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
         [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
         [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]]
    return TriMesh(v, f)


def icosphere(radius=1.0, subdivisions=3):
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    for _ in range(subdivisions):
        cache, nf = {}, []

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        f = nf
    return TriMesh(np.array(verts) * radius, f)


def prism_mesh(polygon, height):
    """Extrude a simple counter-clockwise polygon (xy) along z, centered at z=0."""
    poly = np.asarray(polygon, dtype=float)
    n = len(poly)
    h = height / 2.0
    v = np.vstack([np.c_[poly, np.full(n, -h)], np.c_[poly, np.full(n, h)]])
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces += [[i, j, n + j], [i, n + j, n + i]]
    faces += _ear_clip(poly, offset=n)
    faces += [[c, b, a] for a, b, c in _ear_clip(poly, offset=0)]
    return TriMesh(v, faces)


def _ear_clip(poly, offset):
    idx = list(range(len(poly)))
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    while len(idx) > 3:
        for k in range(len(idx)):
            a, b, c = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            if cross(poly[a], poly[b], poly[c]) <= 0:
                continue
            if any(_in_tri(poly[p], poly[a], poly[b], poly[c]) for p in idx if p not in (a, b, c)):
                continue
            tris.append([a + offset, b + offset, c + offset])
            idx.pop(k)
            break
        else:
            raise ValueError("polygon is not simple")
    tris.append([i + offset for i in idx])
    return tris


def _in_tri(p, a, b, c):
    d1 = (p[0] - b[0]) * (a[1] - b[1]) - (a[0] - b[0]) * (p[1] - b[1])
    d2 = (p[0] - c[0]) * (b[1] - c[1]) - (b[0] - c[0]) * (p[1] - c[1])
    d3 = (p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])
    neg = d1 < 0 or d2 < 0 or d3 < 0
    pos = d1 > 0 or d2 > 0 or d3 > 0
    return not (neg and pos)


# --------------------------------------------------------------- rendering


def ray_mesh_hits(origin, dirs, mesh: TriMesh, chunk=4096):
    """Nearest positive hit distance per ray (Moller-Trumbore); inf on miss."""
    dirs = np.asarray(dirs, dtype=float)
    t_best = np.full(len(dirs), np.inf)
    if mesh is None or len(mesh.faces) == 0 or len(dirs) == 0:
        return t_best
    tri = mesh.triangles
    # cheap bounding-sphere rejection
    center = mesh.vertices.mean(axis=0)
    radius = np.linalg.norm(mesh.vertices - center, axis=1).max() * (1 + 1e-9)
    oc = center - origin
    tc = dirs @ oc
    d2 = oc @ oc - tc ** 2
    cand = np.nonzero((d2 <= radius ** 2) & (tc + radius > 0))[0]
    v0, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    s = origin - v0
    for c0 in range(0, len(cand), chunk):
        ids = cand[c0:c0 + chunk]
        D = dirs[ids][:, None, :]
        p = np.cross(D, e2[None])
        det = np.einsum("rfk,fk->rf", p, e1)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        u = np.einsum("rfk,fk->rf", p, s) * inv
        qv = np.cross(s, e1)
        v = np.einsum("rk,fk->rf", dirs[ids], qv) * inv
        t = (qv * e2).sum(axis=1)[None, :] * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-12)
        t = np.where(hit, t, np.inf)
        t_best[ids] = t.min(axis=1)
    return t_best


def ray_box_hits(origin, dirs, table: TableBox):
    """Nearest positive hit of rays with an axis-aligned box (slab test)."""
    if table is None:
        return np.full(len(dirs), np.inf)
    lo = table.center - table.half_extents
    hi = table.center + table.half_extents
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    tmin = np.minimum(t1, t2).max(axis=1)
    tmax = np.maximum(t1, t2).min(axis=1)
    hit = (tmax >= np.maximum(tmin, 0.0)) & (tmax > 0)
    t = np.where(tmin > 0, tmin, tmax)
    return np.where(hit, t, np.inf)


def render_depth(scene: Scene, camera: CameraModel, noise_sigma=0.0, seed=0, object_transform=None,
                 include_table=True, include_object=True) -> DepthFrame:
    """Simulated depth frame in the camera frame.

    Each beam ray returns its nearest hit against the object mesh and the table
    box; range noise for ray ``i`` is the ``i``-th draw of a generator seeded
    by ``seed``, so results do not depend on how rays are partitioned.
    ``object_transform`` moves the object (world-frame 4x4) before rendering.
    """
    T = camera.T_world_cam
    origin = T[:3, 3]
    dirs_cam = camera.beam
    dirs = dirs_cam @ T[:3, :3].T
    t_obj = np.full(len(dirs), np.inf)
    if include_object and scene.object_mesh is not None:
        t_obj = ray_mesh_hits(origin, dirs, scene.object_world_mesh(object_transform))
    t_tab = ray_box_hits(origin, dirs, scene.table) if include_table else np.full(len(dirs), np.inf)
    t = np.minimum(t_obj, t_tab)
    ray = np.nonzero(np.isfinite(t))[0]
    label = np.where(t_obj[ray] <= t_tab[ray], LABEL_OBJECT, LABEL_TABLE)
    noise = np.random.default_rng(seed).normal(0.0, 1.0, size=len(dirs)) * noise_sigma
    rng_t = t[ray] + noise[ray]
    pts = dirs_cam[ray] * rng_t[:, None]
    return DepthFrame(PointCloud(pts, label), ray, T.copy())


# ------------------------------------------------------------ segmentation


def _plane_from_points(p):
    n = np.cross(p[1] - p[0], p[2] - p[0])
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n /= norm
    return np.append(n, -n @ p[0])


def _lsq_plane(P):
    c = P.mean(axis=0)
    _, _, vt = np.linalg.svd(P - c)
    n = vt[-1]
    return np.append(n, -n @ c)


def segment_table(frame, distance_threshold=RANSAC_THRESHOLD, iterations=RANSAC_ITERATIONS, seed=0):
    """RANSAC plane fit in the camera frame.

    Returns ``(plane, inliers)`` where ``plane = (a, b, c, d)`` has a unit
    normal pointing toward the camera (``d >= 0``). The winning model is
    refined by least squares on its inliers.
    """
    P = frame.cloud.points if isinstance(frame, DepthFrame) else np.asarray(frame, dtype=float)
    if len(P) < 3:
        raise NoPlane("need at least three points")
    rng = np.random.default_rng(seed)
    best, best_count = None, -1
    for _ in range(iterations):
        plane = _plane_from_points(P[rng.choice(len(P), 3, replace=False)])
        if plane is None:
            continue
        count = int(np.sum(np.abs(P @ plane[:3] + plane[3]) <= distance_threshold))
        if count > best_count:
            best, best_count = plane, count
    if best is None or best_count < 3:
        raise NoPlane("no plane with at least three inliers")
    inl = np.abs(P @ best[:3] + best[3]) <= distance_threshold
    refined = _lsq_plane(P[inl])
    inl_ref = np.abs(P @ refined[:3] + refined[3]) <= distance_threshold
    if inl_ref.sum() >= inl.sum():
        best, inl = refined, inl_ref
    if best[3] < 0:
        best = -best
    return best, np.nonzero(inl)[0]


def euclidean_clusters(P, tol):
    """Single-linkage clusters (edge radius ``tol``); returns a label per point."""
    n = len(P)
    if n == 0:
        return np.zeros(0, dtype=int)
    pairs = cKDTree(P).query_pairs(tol, output_type="ndarray")
    A = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(A, directed=False)
    return labels


def cluster_object(frame: DepthFrame, plane_inliers, cluster_tol=CLUSTER_TOL) -> PointCloud:
    """Largest Euclidean cluster among non-plane points, in the world frame."""
    mask = np.ones(len(frame), dtype=bool)
    mask[np.asarray(plane_inliers, dtype=int)] = False
    idx = np.nonzero(mask)[0]
    if len(idx) == 0:
        raise NoObject("no points left after removing the table plane")
    labels = euclidean_clusters(frame.cloud.points[idx], cluster_tol)
    counts = np.bincount(labels)
    keep = idx[labels == np.argmax(counts)]
    world = apply_transform(frame.T_world_cam, frame.cloud.points[keep])
    return PointCloud(world, np.full(len(keep), LABEL_OBJECT))


def voxel_downsample(points, voxel):
    """Centroid of the points falling in each voxel, ordered by voxel key."""
    P = np.asarray(points, dtype=float)
    if len(P) == 0:
        return P.copy()
    keys = np.floor(P / voxel).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    out = np.zeros((len(counts), 3))
    np.add.at(out, inv, P)
    return out / counts[:, None]


def downsample_to(points, max_points=MAX_TRAIN_POINTS, voxel=0.004, growth=1.25):
    """Voxel downsample with a growing voxel edge until at most ``max_points`` remain."""
    P = np.asarray(points, dtype=float)
    if len(P) <= max_points:
        return P.copy(), 0.0
    while True:
        D = voxel_downsample(P, voxel)
        if len(D) <= max_points:
            return D, voxel
        voxel *= growth


def remove_table_points(points_world, table: TableBox, tol):
    if table is None:
        return np.ones(len(points_world), dtype=bool)
    return np.abs(box_sdf(table, points_world)) > tol


# --------------------------------------------------------------- scenarios


def load_scene(path):
    """Scene plus planning camera from a scenario JSON file.

    Mesh paths are resolved relative to the scenario file.
    """
    path = Path(path)
    d = json.loads(path.read_text())
    return scene_from_dict(d, path.parent)


def scene_from_dict(d, base_dir=".", validate=True):
    obj = d.get("object")
    mesh, pose = None, Pose6.identity()
    if obj is not None:
        mesh_path = Path(base_dir) / obj["mesh"]
        if not mesh_path.exists():
            raise FileNotFoundError(f"mesh file not found: {mesh_path}")
        mesh = load_mesh(mesh_path)
        pose = Pose6.from_dict(obj["pose"])
    table = TableBox.from_dict(d["table"]) if d.get("table") else None
    camera = CameraModel.from_dict(d["camera"])
    scene = Scene(mesh, pose, table, camera.pose, Pose6.from_dict(d["goal"]))
    if validate:
        validate_scene(scene, camera)
    return scene, camera


def validate_scene(scene: Scene, camera: CameraModel, rest_tol=0.002):
    """Check that the object rests on the table and the goal is inside the viewing cone."""
    if scene.object_mesh is not None and scene.table is not None:
        low = float(scene.object_world_mesh().vertices[:, 2].min())
        if abs(low - scene.table.top) > rest_tol:
            raise ValueError(f"object lowest point {low:.4f} is not on the table top {scene.table.top:.4f}")
    if not bool(in_cone(camera, scene.goal_pose.position)):
        raise ValueError("goal position lies outside the camera viewing cone")

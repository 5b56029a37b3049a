"""Signed distances and constraint functions: robot vs cloud, table box, camera cone."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .arm import ArmModel, sphere_centers
from .geom import Pose6, apply_transform, invert_transform


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Truncated viewing cone along the optical +z axis plus a discrete beam.

    The beam is a ``rows x cols`` grid in tangent space spanning the cone,
    keeping only directions within ``half_angle`` of the axis.
    """

    pose: Pose6
    half_angle: float = 0.45
    near: float = 0.3
    far: float = 1.6
    rows: int = 48
    cols: int = 48

    def __post_init__(self):
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if not 0 < self.half_angle < np.pi / 2:
            raise ValueError("half_angle must lie in (0, pi/2)")
        t = np.tan(self.half_angle)
        u = np.linspace(-t, t, self.cols)
        v = np.linspace(-t, t, self.rows)
        U, V = np.meshgrid(u, v)
        d = np.stack([U.ravel(), V.ravel(), np.ones(U.size)], axis=1)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        d = d[d[:, 2] >= np.cos(self.half_angle) - 1e-12]
        if len(d) == 0:
            raise ValueError("empty beam")
        d.flags.writeable = False
        object.__setattr__(self, "beam", d)
        object.__setattr__(self, "T_world_cam", self.pose.matrix())
        object.__setattr__(self, "T_cam_world", invert_transform(self.pose.matrix()))

    @classmethod
    def looking_at(cls, eye, target, up=(0.0, 0.0, 1.0), **kw):
        eye, target = np.asarray(eye, float), np.asarray(target, float)
        z = target - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, float))
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        T = np.eye(4)
        T[:3, :3] = np.stack([x, y, z], axis=1)
        T[:3, 3] = eye
        return cls(Pose6.from_matrix(T), **kw)

    def with_beam(self, rows, cols):
        return CameraModel(self.pose, self.half_angle, self.near, self.far, rows, cols)

    def to_camera(self, points):
        return apply_transform(self.T_cam_world, points)

    def to_dict(self):
        return {"pose": self.pose.to_dict(), "half_angle": self.half_angle, "near": self.near,
                "far": self.far, "rows": self.rows, "cols": self.cols}

    @classmethod
    def from_dict(cls, d):
        kw = {k: d[k] for k in ("half_angle", "near", "far", "rows", "cols") if k in d}
        if "pose" in d:
            return cls(Pose6.from_dict(d["pose"]), **kw)
        return cls.looking_at(d["eye"], d["target"], **kw)


@dataclass(frozen=True)
class TableBox:
    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(3)
        h = np.array(self.half_extents, dtype=float).reshape(3)
        if np.any(h <= 0):
            raise ValueError("table half extents must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", h)

    @property
    def top(self):
        return float(self.center[2] + self.half_extents[2])

    def to_dict(self):
        return {"center": self.center.tolist(), "half_extents": self.half_extents.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["center"], d["half_extents"])


def box_sdf(table: TableBox, p):
    """Exact signed distance to an axis-aligned box (negative inside)."""
    q = np.abs(np.asarray(p, dtype=float) - table.center) - table.half_extents
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


def _segment_distance_2d(P, a, b):
    ab = b - a
    t = np.clip(((P - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(P - (a + t[..., None] * ab), axis=-1)


def cone_sdf_local(camera: CameraModel, p_cam):
    """Signed distance (meters) to the truncated cone for camera-frame points."""
    p_cam = np.asarray(p_cam, dtype=float)
    r = np.hypot(p_cam[..., 0], p_cam[..., 1])
    z = p_cam[..., 2]
    P = np.stack([r, z], axis=-1)
    t = np.tan(camera.half_angle)
    n, f = camera.near, camera.far
    a0, a1 = np.array([0.0, n]), np.array([n * t, n])
    b0, b1 = np.array([0.0, f]), np.array([f * t, f])
    dist = np.minimum(np.minimum(_segment_distance_2d(P, a0, a1), _segment_distance_2d(P, a1, b1)),
                      _segment_distance_2d(P, b0, b1))
    inside = (z >= n) & (z <= f) & (r <= z * t)
    return np.where(inside, -dist, dist)


def in_cone(camera: CameraModel, p):
    """Exact membership predicate (axial and angular tests)."""
    pc = camera.to_camera(p)
    r = np.hypot(pc[..., 0], pc[..., 1])
    return (pc[..., 2] >= camera.near) & (pc[..., 2] <= camera.far) & (r <= pc[..., 2] * np.tan(camera.half_angle))


def cone_violation(camera: CameraModel, p):
    return cone_sdf_local(camera, camera.to_camera(p))


def psi_robot_cloud(arm: ArmModel, q, cloud, tree=None):
    """Minimum signed distance between the (non-gripper) link spheres and a cloud.

    Vectorized over leading dimensions of ``q``.
    """
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=float)
    tree = cKDTree(pts) if tree is None else tree
    C = sphere_centers(arm, q)
    d, _ = tree.query(C.reshape(-1, 3))
    d = d.reshape(C.shape[:-1]) - arm.sphere_radii
    return d.min(axis=-1)


def sphere_clearances(arm: ArmModel, q, tree):
    """Per-sphere signed distance (..., S) to the nearest cloud point."""
    C = sphere_centers(arm, q)
    d, _ = tree.query(C.reshape(-1, 3))
    return d.reshape(C.shape[:-1]) - arm.sphere_radii


def collision_violation(arm: ArmModel, q, cloud, epsilon=0.01, tree=None):
    return np.maximum(epsilon - psi_robot_cloud(arm, q, cloud, tree), 0.0)


def sphere_box_distances(table: TableBox, arm: ArmModel, q):
    """Per-sphere signed distance (..., S) to the table box surface."""
    return box_sdf(table, sphere_centers(arm, q)) - arm.sphere_radii


def box_violation(table: TableBox, arm: ArmModel, q, epsilon=0.01):
    return np.maximum(epsilon - sphere_box_distances(table, arm, q), 0.0).max(axis=-1)

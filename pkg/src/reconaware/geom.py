"""Geometric primitives: rigid poses, point clouds, triangle meshes, PCA frames.

Orientation convention everywhere in this package is extrinsic X-Y-Z Euler
angles (roll, pitch, yaw), i.e. ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``, with
every angle wrapped to ``(-pi, pi]``. Poses serialized to JSON store
``{"position": [x, y, z], "rpy": [roll, pitch, yaw]}`` in meters/radians.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateCloud

LABEL_OTHER = 0
LABEL_TABLE = 1
LABEL_OBJECT = 2


def wrap_angle(a):
    """Wrap angles to the half-open interval (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


def rpy_to_matrix(rpy):
    """Rotation matrices for (..., 3) extrinsic XYZ angles; returns (..., 3, 3)."""
    rpy = np.asarray(rpy, dtype=float)
    a, b, c = rpy[..., 0], rpy[..., 1], rpy[..., 2]
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cc, sc = np.cos(c), np.sin(c)
    R = np.empty(rpy.shape[:-1] + (3, 3))
    R[..., 0, 0] = cc * cb
    R[..., 0, 1] = cc * sb * sa - sc * ca
    R[..., 0, 2] = cc * sb * ca + sc * sa
    R[..., 1, 0] = sc * cb
    R[..., 1, 1] = sc * sb * sa + cc * ca
    R[..., 1, 2] = sc * sb * ca - cc * sa
    R[..., 2, 0] = -sb
    R[..., 2, 1] = cb * sa
    R[..., 2, 2] = cb * ca
    return R


def matrix_to_rpy(R):
    """Inverse of :func:`rpy_to_matrix`; pitch is returned in [-pi/2, pi/2]."""
    R = np.asarray(R, dtype=float)
    pitch = np.arctan2(-R[..., 2, 0], np.hypot(R[..., 2, 1], R[..., 2, 2]))
    roll = np.arctan2(R[..., 2, 1], R[..., 2, 2])
    yaw = np.arctan2(R[..., 1, 0], R[..., 0, 0])
    return wrap_angle(np.stack([roll, pitch, yaw], axis=-1))


def make_transform(R, t):
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    return T


def invert_transform(T):
    T = np.asarray(T, dtype=float)
    Ti = np.eye(4)
    Ti[:3, :3] = T[:3, :3].T
    Ti[:3, 3] = -T[:3, :3].T @ T[:3, 3]
    return Ti


def apply_transform(T, points):
    """Apply a 4x4 rigid transform to an (N, 3) array (or a single point)."""
    points = np.asarray(points, dtype=float)
    return points @ T[:3, :3].T + T[:3, 3]


@dataclass(frozen=True)
class Pose6:
    """Position plus extrinsic XYZ Euler angles."""

    position: np.ndarray
    rpy: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        pos = np.array(self.position, dtype=float).reshape(3)
        ang = wrap_angle(np.array(self.rpy, dtype=float).reshape(3))
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(ang))):
            raise ValueError("pose components must be finite")
        pos.flags.writeable = False
        ang.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rpy", ang)

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(T[:3, 3], matrix_to_rpy(T[:3, :3]))

    @property
    def rotation(self):
        return rpy_to_matrix(self.rpy)

    def matrix(self):
        return make_transform(self.rotation, self.position)

    def compose(self, other: "Pose6") -> "Pose6":
        return Pose6.from_matrix(self.matrix() @ other.matrix())

    def inverse(self) -> "Pose6":
        return Pose6.from_matrix(invert_transform(self.matrix()))

    def to_dict(self):
        return {"position": [float(v) for v in self.position], "rpy": [float(v) for v in self.rpy]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["position"], d.get("rpy", [0.0, 0.0, 0.0]))


def transform_point(pose: Pose6, p):
    """Rotate ``p`` by the pose orientation, then translate by its position."""
    return pose.rotation @ np.asarray(p, dtype=float) + pose.position


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite values")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.array(self.labels, dtype=int).reshape(-1)
            if lab.shape[0] != pts.shape[0]:
                raise ValueError("labels must match the number of points")
            lab.flags.writeable = False
            object.__setattr__(self, "labels", lab)

    def __len__(self):
        return self.points.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return PointCloud(self.points[idx], labels)

    def transformed(self, T):
        return PointCloud(apply_transform(T, self.points), self.labels)


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        if f.size and np.any(_face_areas(v, f) <= 1e-14):
            raise ValueError("mesh has degenerate (zero-area) faces")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def triangles(self):
        """(F, 3, 3) array of triangle corner coordinates."""
        return self.vertices[self.faces]

    def face_areas(self):
        return _face_areas(self.vertices, self.faces)

    def face_normals(self):
        tri = self.triangles
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def transformed(self, T):
        return TriMesh(apply_transform(T, self.vertices), self.faces)

    def sample_surface(self, n, rng):
        """Area-weighted uniform samples; returns (points, face_index)."""
        areas = self.face_areas()
        fi = rng.choice(len(areas), size=n, p=areas / areas.sum())
        u = rng.random((n, 2))
        flip = u.sum(axis=1) > 1.0
        u[flip] = 1.0 - u[flip]
        tri = self.triangles[fi]
        pts = tri[:, 0] + u[:, :1] * (tri[:, 1] - tri[:, 0]) + u[:, 1:] * (tri[:, 2] - tri[:, 0])
        return pts, fi


def _face_areas(v, f):
    tri = v[f]
    return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


@dataclass(frozen=True)
class ObbFrame:
    """Oriented bounding box: centroid + principal axes and half extents."""

    pose: Pose6
    half_extents: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        h = np.array(self.half_extents, dtype=float).reshape(3)
        if np.any(h <= 0):
            raise ValueError("half extents must be positive")
        h.flags.writeable = False
        object.__setattr__(self, "half_extents", h)

    @property
    def axes(self):
        """3x3 matrix whose columns are the box axes."""
        return self.pose.rotation

    def to_dict(self):
        return {"pose": self.pose.to_dict(), "half_extents": [float(v) for v in self.half_extents]}

    @classmethod
    def from_dict(cls, d):
        return cls(Pose6.from_dict(d["pose"]), d["half_extents"])


def _orient_axes(vecs):
    """Deterministic signs: agree with same-index world axis, ties toward +z."""
    out = vecs.copy()
    for i in range(2):
        a = out[:, i]
        d = a[i]
        if abs(d) < 1e-9:
            # tie: prefer positive z, then first non-zero component
            for k in (2, 0, 1):
                if abs(a[k]) > 1e-9:
                    d = a[k]
                    break
        if d < 0:
            out[:, i] = -a
    out[:, 2] = np.cross(out[:, 0], out[:, 1])
    return out


def _complete_basis(vecs, rank):
    basis = [vecs[:, i] for i in range(rank)]
    for e in np.eye(3)[::-1]:
        if len(basis) == 3:
            break
        v = e - sum(np.dot(e, b) * b for b in basis)
        if np.linalg.norm(v) > 1e-6:
            basis.append(v / np.linalg.norm(v))
    return np.stack(basis, axis=1)


def pca_pose(cloud, allow_degenerate=False, min_half_extent=1e-6):
    """Principal-component frame of a point cloud.

    Axes are covariance eigenvectors sorted by decreasing eigenvalue, signed so
    that axis ``i`` has a non-negative component along world axis ``i``; the
    third axis is the cross product of the first two. Half extents cover all
    points projected on the axes (symmetric about the centroid).

    Raises
    ------
    DegenerateCloud
        If the covariance has rank < 3 and ``allow_degenerate`` is False. With
        ``allow_degenerate`` the frame is completed with arbitrary orthogonal
        axes and flagged.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    if len(pts) == 0:
        raise DegenerateCloud("empty cloud")
    centroid = pts.mean(axis=0)
    X = pts - centroid
    cov = X.T @ X / len(pts)
    w, V = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    scale = max(w[0], 1e-300)
    rank = int(np.sum(w > 1e-12 * scale)) if w[0] > 1e-20 else 0
    degenerate = rank < 3
    if degenerate:
        if not allow_degenerate:
            raise DegenerateCloud(f"covariance rank {rank} < 3")
        V = _complete_basis(V, min(rank, 2))
    R = _orient_axes(V)
    half = np.abs(X @ R).max(axis=0)
    half = np.maximum(half, min_half_extent)
    return ObbFrame(Pose6(centroid, matrix_to_rpy(R)), half, degenerate)


# ---------------------------------------------------------------- file I/O


def write_ply(path, points, faces=None, scalars=None, labels=None):
    """Write an ASCII PLY with optional faces and extra per-vertex scalars."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    scalars = dict(scalars or {})
    if labels is not None:
        scalars["label"] = np.asarray(labels)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(points)}"]
    lines += [f"property double {c}" for c in "xyz"]
    for name, vals in scalars.items():
        kind = "int" if np.issubdtype(np.asarray(vals).dtype, np.integer) else "double"
        lines.append(f"property {kind} {name}")
    if faces is not None:
        lines += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    cols = [points[:, 0], points[:, 1], points[:, 2]] + [np.asarray(v) for v in scalars.values()]
    for i in range(len(points)):
        lines.append(" ".join(_fmt(c[i]) for c in cols))
    if faces is not None:
        for f in np.asarray(faces, dtype=int):
            lines.append("3 " + " ".join(str(int(k)) for k in f))
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v):
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return repr(float(v))


def read_ply(path):
    """Read an ASCII PLY; returns (points, faces or None, dict of extra scalars)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    elements, i = [], 1
    while lines[i].strip() != "end_header":
        tok = lines[i].split()
        if tok[0] == "format" and tok[1] != "ascii":
            raise ValueError("only ASCII PLY is supported")
        if tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            elements[-1][2].append(tok[-1])
        i += 1
    i += 1
    points, faces, extra = np.zeros((0, 3)), None, {}
    for name, count, props in elements:
        rows = [lines[i + k].split() for k in range(count)]
        i += count
        if name == "vertex":
            arr = np.array(rows, dtype=float).reshape(count, len(props))
            idx = {p: j for j, p in enumerate(props)}
            points = arr[:, [idx["x"], idx["y"], idx["z"]]]
            for p, j in idx.items():
                if p not in "xyz":
                    extra[p] = arr[:, j]
        elif name == "face":
            faces = np.array([[int(t) for t in r[1:4]] for r in rows], dtype=np.int64).reshape(-1, 3)
    return points, faces, extra


def read_obj(path):
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "v":
            verts.append([float(t) for t in tok[1:4]])
        elif tok[0] == "f":
            idx = [int(t.split("/")[0]) - 1 for t in tok[1:]]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    return np.array(verts), np.array(faces, dtype=np.int64)


def load_mesh(path):
    path = Path(path)
    if path.suffix.lower() == ".obj":
        v, f = read_obj(path)
    else:
        v, f, _ = read_ply(path)
    if f is None:
        raise ValueError(f"{path}: mesh has no faces")
    return TriMesh(v, f)


def save_cloud(path, cloud: PointCloud):
    write_ply(path, cloud.points, labels=cloud.labels)


def load_cloud(path):
    pts, _, extra = read_ply(path)
    labels = extra.get("label")
    return PointCloud(pts, None if labels is None else labels.astype(int))


def dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")

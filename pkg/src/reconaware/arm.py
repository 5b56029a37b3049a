"""7-DOF serial arm with a two-jaw gripper (standard DH convention)."""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scipy.spatial.transform import Rotation

from .errors import BadLink
from .geom import Pose6, matrix_to_rpy, rpy_to_matrix, wrap_angle

N_JOINTS = 7
WRIST = 6
JAW1 = 7
JAW2 = 8


@dataclass(frozen=True, eq=False)
class ArmModel:
    """Kinematic description.

    ``dh`` rows are ``(a, alpha, d, theta_offset)``; link ``i`` transform is
    ``Rz(q_i + offset) Tz(d) Tx(a) Rx(alpha)``. ``jaw_offsets`` are 4x4
    transforms from the wrist (last link) frame to each jaw frame.
    ``link_spheres[i]`` lists ``(center_in_link_frame, radius)`` for link i.
    """

    dh: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    jaw_offsets: tuple
    link_spheres: tuple
    base: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        dh = np.array(self.dh, dtype=float).reshape(N_JOINTS, 4)
        lo = np.array(self.lower, dtype=float).reshape(N_JOINTS)
        hi = np.array(self.upper, dtype=float).reshape(N_JOINTS)
        if not np.all(lo < hi):
            raise ValueError("joint_lower must be < joint_upper")
        jaws = tuple(np.array(j, dtype=float).reshape(4, 4) for j in self.jaw_offsets)
        if len(jaws) != 2:
            raise ValueError("exactly two jaw offsets are required")
        mid = 0.5 * (jaws[0][:3, 3] + jaws[1][:3, 3])
        if abs(mid[0]) > 1e-9 or abs(mid[1]) > 1e-9:
            raise ValueError("jaw offsets must be symmetric about the wrist approach axis")
        spheres = []
        for link in self.link_spheres:
            spheres.append(tuple((np.array(c, dtype=float).reshape(3), float(r)) for c, r in link))
        if len(spheres) != N_JOINTS:
            raise ValueError("one sphere list per link is required")
        object.__setattr__(self, "dh", dh)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "jaw_offsets", jaws)
        object.__setattr__(self, "link_spheres", tuple(spheres))
        object.__setattr__(self, "base", np.array(self.base, dtype=float).reshape(4, 4))
        # flattened sphere table for vectorized distance queries
        owner, centers, radii = [], [], []
        for i, link in enumerate(spheres):
            for c, r in link:
                owner.append(i)
                centers.append(c)
                radii.append(r)
        object.__setattr__(self, "_sphere_link", np.array(owner, dtype=int))
        object.__setattr__(self, "_sphere_local", np.array(centers).reshape(-1, 3))
        object.__setattr__(self, "sphere_radii", np.array(radii))

    @property
    def midpoint_offset(self):
        """Distance from the wrist origin to the jaw midpoint along the approach axis."""
        return 0.5 * (self.jaw_offsets[0][2, 3] + self.jaw_offsets[1][2, 3])

    def limit_midpoint(self):
        return 0.5 * (self.lower + self.upper)

    def to_dict(self):
        return {
            "dh": self.dh.tolist(),
            "joint_lower": self.lower.tolist(),
            "joint_upper": self.upper.tolist(),
            "jaw_offsets": [j.tolist() for j in self.jaw_offsets],
            "link_spheres": [[{"center": c.tolist(), "radius": r} for c, r in link] for link in self.link_spheres],
            "base": self.base.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        spheres = [[(s["center"], s["radius"]) for s in link] for link in d["link_spheres"]]
        return cls(d["dh"], d["joint_lower"], d["joint_upper"], tuple(d["jaw_offsets"]), tuple(spheres),
                   d.get("base", np.eye(4)))


def load_arm(path) -> ArmModel:
    return ArmModel.from_dict(json.loads(Path(path).read_text()))


def _dh_transforms(dh, q):
    """(B, 7, 4, 4) per-joint transforms for (B, 7) joint angles."""
    a, alpha, d, off = dh[:, 0], dh[:, 1], dh[:, 2], dh[:, 3]
    th = q + off
    ct, st = np.cos(th), np.sin(th)
    ca, sa = np.cos(alpha), np.sin(alpha)
    A = np.zeros(q.shape + (4, 4))
    A[..., 0, 0] = ct
    A[..., 0, 1] = -st * ca
    A[..., 0, 2] = st * sa
    A[..., 0, 3] = a * ct
    A[..., 1, 0] = st
    A[..., 1, 1] = ct * ca
    A[..., 1, 2] = -ct * sa
    A[..., 1, 3] = a * st
    A[..., 2, 1] = sa
    A[..., 2, 2] = ca
    A[..., 2, 3] = d
    A[..., 3, 3] = 1.0
    return A


_FK_CACHE = OrderedDict()
_FK_CACHE_SIZE = 8


def fk_all(model: ArmModel, q):
    """World frames of all links and both jaws.

    Returns a read-only array of shape (..., 9, 4, 4): indices 0-6 are links
    1-7, 7 and 8 the two jaws. The last few results are cached because cost
    and constraint terms are evaluated at the same configurations.
    """
    q = np.asarray(q, dtype=float)
    key = (id(model), q.shape, q.tobytes())
    hit = _FK_CACHE.get(key)
    if hit is not None and hit[0] is model:
        _FK_CACHE.move_to_end(key)
        return hit[1]
    out = _fk_all(model, q)
    out.flags.writeable = False
    _FK_CACHE[key] = (model, out)
    if len(_FK_CACHE) > _FK_CACHE_SIZE:
        _FK_CACHE.popitem(last=False)
    return out


def _fk_all(model, q):
    batch = q.shape[:-1]
    qf = q.reshape(-1, N_JOINTS)
    A = _dh_transforms(model.dh, qf)
    out = np.empty((qf.shape[0], 9, 4, 4))
    T = np.broadcast_to(model.base, (qf.shape[0], 4, 4))
    for i in range(N_JOINTS):
        T = T @ A[:, i]
        out[:, i] = T
    out[:, JAW1] = T @ model.jaw_offsets[0]
    out[:, JAW2] = T @ model.jaw_offsets[1]
    return out.reshape(batch + (9, 4, 4))


def fk_link(model: ArmModel, q, link: int) -> Pose6:
    if not 0 <= int(link) <= 8:
        raise BadLink(f"link index {link} outside [0, 8]")
    return Pose6.from_matrix(fk_all(model, q)[int(link)])


def wrist_transform(model: ArmModel, q):
    """(..., 4, 4) wrist frames."""
    return fk_all(model, q)[..., WRIST, :, :]


def midpoint_frames(model: ArmModel, q):
    """Jaw midpoint positions (..., 3) and wrist rotations (..., 3, 3)."""
    F = fk_all(model, q)
    pos = 0.5 * (F[..., JAW1, :3, 3] + F[..., JAW2, :3, 3])
    return pos, F[..., WRIST, :3, :3]


def jaw_midpoint(model: ArmModel, q) -> Pose6:
    pos, R = midpoint_frames(model, q)
    return Pose6(pos, matrix_to_rpy(R))


def midpoint_pose_vectors(model: ArmModel, q):
    """(..., 6) [position, rpy] of the jaw midpoint."""
    pos, R = midpoint_frames(model, q)
    return np.concatenate([pos, matrix_to_rpy(R)], axis=-1)


def sphere_centers(model: ArmModel, q):
    """World centers (..., S, 3) of all collision spheres."""
    F = fk_all(model, q)
    T = F[..., model._sphere_link, :, :]
    return np.einsum("...sij,sj->...si", T[..., :3, :3], model._sphere_local) + T[..., :3, 3]


def within_limits(model: ArmModel, q) -> bool:
    q = np.asarray(q, dtype=float)
    return bool(np.all(q >= model.lower) and np.all(q <= model.upper))


def midpoint_jacobian(model: ArmModel, q, h=1e-6):
    """Central-difference Jacobian (3, 7) of the jaw midpoint position."""
    q = np.asarray(q, dtype=float)
    E = np.eye(N_JOINTS) * h
    qs = np.concatenate([q + E, q - E])
    pos, _ = midpoint_frames(model, qs)
    return ((pos[:N_JOINTS] - pos[N_JOINTS:]) / (2 * h)).T


def _pose_error(model, q, target, angle_mask, angle_scale):
    pos, R = midpoint_frames(model, q)
    e_pos = pos - target[:3]
    if angle_mask.all():
        # geodesic error avoids the Euler wrap discontinuity
        Rt = rpy_to_matrix(target[3:])
        e_ang = Rotation.from_matrix(np.swapaxes(R, -1, -2) @ Rt).as_rotvec() * angle_scale
    else:
        e_ang = wrap_angle(matrix_to_rpy(R) - target[3:])[..., angle_mask] * angle_scale
    return np.concatenate([e_pos, e_ang], axis=-1)


def solve_ik(model: ArmModel, target: Pose6, q_init, angle_mask=(True, True, True), angle_scale=0.3,
             damping=1e-2, iters=200, tol=1e-5, h=1e-6):
    """Damped least-squares IK for the jaw-midpoint pose (internal seeding helper).

    Only Euler components selected by ``angle_mask`` are matched. Joint limits
    are enforced by clipping. Returns ``(q, residual_norm)``.
    """
    mask = np.asarray(angle_mask, dtype=bool)
    tgt = np.concatenate([target.position, target.rpy])
    q = np.clip(np.asarray(q_init, dtype=float), model.lower, model.upper)
    E = np.eye(N_JOINTS) * h
    best_q, best_err = q, np.inf
    for _ in range(iters):
        e = _pose_error(model, q, tgt, mask, angle_scale)
        err = np.linalg.norm(e)
        if err < best_err:
            best_q, best_err = q, err
        if err < tol:
            break
        es = _pose_error(model, np.concatenate([q + E, q - E]), tgt, mask, angle_scale)
        J = ((es[:N_JOINTS] - es[N_JOINTS:]) / (2 * h)).T
        dq = -J.T @ np.linalg.solve(J @ J.T + damping ** 2 * np.eye(len(e)), e)
        step = np.linalg.norm(dq)
        if step > 0.3:
            dq *= 0.3 / step
        q = np.clip(q + dq, model.lower, model.upper)
    return best_q, float(best_err)


def _segment_spheres(p0, p1, radius, spacing):
    n = max(1, int(np.ceil(np.linalg.norm(p1 - p0) / spacing)))
    return [(p0 + (p1 - p0) * t, radius) for t in np.linspace(0.0, 1.0, n + 1)]


def default_arm() -> ArmModel:
    """A Baxter-class 7-DOF arm (about 1 m reach) with an 80 mm parallel gripper."""
    dh = np.array([
        [0.069, -np.pi / 2, 0.27035, 0.0],
        [0.0, np.pi / 2, 0.0, np.pi / 2],
        [0.069, -np.pi / 2, 0.36435, 0.0],
        [0.0, np.pi / 2, 0.0, 0.0],
        [0.010, -np.pi / 2, 0.37429, 0.0],
        [0.0, np.pi / 2, 0.0, 0.0],
        [0.0, 0.0, 0.10, 0.0],
    ])
    lower = np.array([-1.7016, -2.147, -3.0541, -0.05, -3.059, -1.5707, -3.059])
    upper = np.array([1.7016, 1.047, 3.0541, 2.618, 3.059, 2.094, 3.059])
    jaw_z = 0.13
    jaws = tuple(np.array([[1, 0, 0, 0], [0, 1, 0, s * 0.04], [0, 0, 1, jaw_z], [0, 0, 0, 1.0]]) for s in (1, -1))
    radii = [0.07, 0.06, 0.055, 0.05, 0.045, 0.045, 0.04]
    spheres = []
    for i, (a, alpha, d, _) in enumerate(dh):
        ca, sa = np.cos(alpha), np.sin(alpha)
        # origin of the previous frame expressed in this link's frame: Rx(-alpha) (-a, 0, -d)
        prev = np.array([-a, -d * sa, -d * ca])
        spheres.append(_segment_spheres(prev, np.zeros(3), radii[i], 0.06))
    return ArmModel(dh, lower, upper, jaws, tuple(spheres))

"""Building blocks shared by the grasp, transition and baseline planners.

Every cost and constraint used here is a sum (or stack) of per-waypoint terms,
so derivatives are taken by perturbing all waypoints at once: one batched
forward-kinematics call per gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .arm import N_JOINTS, ArmModel, midpoint_frames, midpoint_pose_vectors, solve_ik, sphere_centers, wrist_transform
from .geom import Pose6, matrix_to_rpy, wrap_angle
from .nlopt import TrajectoryProblem
from .sdf import CameraModel, TableBox, box_sdf, cone_sdf_local

FD_STEP = 1e-6
ANGLE_SCALE = 0.1  # meters per radian when orientation errors enter a squared cost


def interpolate_poses(x0: Pose6, xf: Pose6, n: int):
    """``n`` poses ``x_k = x0 + (xf - x0) k / n`` for ``k = 1..n``; angles on the shortest arc."""
    if n < 1:
        raise ValueError("need at least one waypoint")
    dpos = xf.position - x0.position
    dang = wrap_angle(xf.rpy - x0.rpy)
    return [Pose6(x0.position + dpos * k / n, x0.rpy + dang * k / n) for k in range(1, n + 1)]


def _perturbed(traj, h):
    """Configurations traj[k] +/- h e_j, shape (n, 2*7, 7)."""
    E = np.eye(N_JOINTS) * h
    return np.concatenate([traj[:, None, :] + E[None], traj[:, None, :] - E[None]], axis=1)


def separable_grad(term, traj, h=FD_STEP):
    """Gradient of ``sum_k term(k, q_k)`` by central differences, batched over waypoints.

    ``term(Q)`` receives configurations shaped (n, B, 7) and returns (n, B).
    """
    Q = _perturbed(traj, h)
    vals = term(Q)
    return (vals[:, :N_JOINTS] - vals[:, N_JOINTS:]) / (2 * h)


def separable_jac(term, traj, h=FD_STEP):
    """Jacobian of stacked per-waypoint vector terms.

    ``term(Q)`` maps (n, B, 7) configurations to (n, B, m) values. The
    result has shape (n*m, n, 7) with waypoint k's rows depending on q_k only.
    """
    n = traj.shape[0]
    Q = _perturbed(traj, h)
    vals = term(Q)
    m = vals.shape[-1]
    d = (vals[:, :N_JOINTS] - vals[:, N_JOINTS:]) / (2 * h)  # (n, 7, m)
    J = np.zeros((n, m, n, N_JOINTS))
    for k in range(n):
        J[k, :, k, :] = d[k].T
    return J.reshape(n * m, n, N_JOINTS)


@dataclass
class PoseTrackingCost:
    """``p_final * |mid(q_last) - goal|^2 + sum_k |mid(q_k) - x_k|^2`` over waypoints 1..n-2.

    Orientation residuals are wrapped Euler differences scaled by
    ``angle_scale``; ``final_angles`` / ``waypoint_angles`` select which
    Euler components enter each term.
    """

    arm: ArmModel
    waypoints: np.ndarray  # (n-1, 6) targets for waypoints 1..n-1; last row unused
    goal: np.ndarray  # (6,)
    p_final: float
    final_angles: tuple = (True, True, True)
    waypoint_angles: tuple = (False, False, False)
    angle_scale: float = ANGLE_SCALE

    def _tables(self, n):
        if getattr(self, "_cached_n", None) != n:
            tgt = np.zeros((n, 6))
            tgt[1:n - 1] = self.waypoints[:n - 2]
            tgt[n - 1] = self.goal
            w = np.ones(n)
            w[0] = 0.0
            w[n - 1] = self.p_final
            mask = np.zeros((n, 3))
            mask[1:n - 1] = np.asarray(self.waypoint_angles, dtype=float)
            mask[n - 1] = np.asarray(self.final_angles, dtype=float)
            self._cached = (tgt, w, mask * self.angle_scale ** 2)
            self._cached_n = n
        return self._cached

    def _terms(self, Q):
        """Per-waypoint cost for configurations Q of shape (n, B, 7)."""
        n = Q.shape[0]
        tgt, w, amask = self._tables(n)
        V = midpoint_pose_vectors(self.arm, Q)  # (n, B, 6)
        r = np.sum((V[..., :3] - tgt[:, None, :3]) ** 2, axis=-1)
        da = wrap_angle(V[..., 3:] - tgt[:, None, 3:])
        r = r + np.sum(da ** 2 * amask[:, None, :], axis=-1)
        return w[:, None] * r

    def __call__(self, traj):
        return float(self._terms(np.asarray(traj)[:, None, :]).sum())

    def grad(self, traj):
        return separable_grad(self._terms, np.asarray(traj, dtype=float))


class WaypointConstraint:
    """Stacked per-waypoint, per-sphere inequality ``g <= 0`` with a batched Jacobian."""

    def __init__(self, fn, skip_first=True):
        self.fn = fn
        self.skip_first = skip_first

    def __call__(self, traj):
        vals = self.fn(np.asarray(traj, dtype=float)[:, None, :])[:, 0, :]
        if self.skip_first:
            vals = vals[1:]
        return vals.ravel()

    def jac(self, traj):
        traj = np.asarray(traj, dtype=float)
        J = separable_jac(self.fn, traj)
        m = J.shape[0] // traj.shape[0]
        if self.skip_first:
            J = J[m:]
        return J


def clearance_term(arm: ArmModel, cloud_points, epsilon):
    """``epsilon - (nearest-point distance - radius)`` per collision sphere."""
    tree = cKDTree(np.asarray(cloud_points, dtype=float))

    def fn(Q):
        C = sphere_centers(arm, Q)
        d, _ = tree.query(C.reshape(-1, 3))
        return epsilon - (d.reshape(C.shape[:-1]) - arm.sphere_radii)

    return fn


def table_term(arm: ArmModel, table: TableBox, epsilon):
    def fn(Q):
        return epsilon - (box_sdf(table, sphere_centers(arm, Q)) - arm.sphere_radii)

    return fn


def cone_term(arm: ArmModel, camera: CameraModel, grasp_tf, point_local):
    """Cone signed distance of an object point rigidly attached to the wrist."""
    p = np.append(np.asarray(point_local, dtype=float), 1.0)
    p_wrist = (grasp_tf @ p)[:3]

    def fn(Q):
        W = wrist_transform(arm, Q)
        world = np.einsum("...ij,j->...i", W[..., :3, :3], p_wrist) + W[..., :3, 3]
        return cone_sdf_local(camera, camera.to_camera(world))[..., None]

    return fn


def orientation_band(arm: ArmModel, target_rpy, indices, band):
    """``|wrap(angle_i - target_i)| <= band`` at the last waypoint, as two inequalities each."""
    idx = list(indices)
    tgt = np.asarray(target_rpy, dtype=float)

    def fn(traj):
        _, R = midpoint_frames(arm, np.asarray(traj)[-1])
        d = wrap_angle(matrix_to_rpy(R) - tgt)[idx]
        return np.concatenate([d - band, -d - band])

    def jac(traj):
        traj = np.asarray(traj, dtype=float)
        n = traj.shape[0]
        q = traj[-1]
        E = np.eye(N_JOINTS) * FD_STEP
        _, R = midpoint_frames(arm, np.concatenate([q + E, q - E]))
        a = matrix_to_rpy(R)
        da = wrap_angle(a[:N_JOINTS] - a[N_JOINTS:]) / (2 * FD_STEP)  # (7, 3)
        J = np.zeros((2 * len(idx), n, N_JOINTS))
        J[:len(idx), -1, :] = da[:, idx].T
        J[len(idx):, -1, :] = -da[:, idx].T
        return J

    return fn, jac


def make_problem(arm: ArmModel, start, cost: PoseTrackingCost, constraints, horizon):
    cons = [c for c, _ in constraints]
    jacs = [j for _, j in constraints]
    return TrajectoryProblem(horizon, cost, (arm.lower, arm.upper), start, cons, cost.grad, jacs)


def ik_seed(arm: ArmModel, target: Pose6, q_start, rng=None, extra_seeds=4, penalty=None):
    """Best of several damped least-squares IK runs (lowest residual + penalty)."""
    rng = np.random.default_rng(0) if rng is None else rng
    q_start = np.asarray(q_start, dtype=float)
    seeds = [q_start + 0.05, arm.limit_midpoint()]
    seeds += [np.clip(q_start + rng.normal(0, 0.5, N_JOINTS), arm.lower, arm.upper) for _ in range(extra_seeds)]
    best, best_score = None, np.inf
    for s in seeds:
        q, err = solve_ik(arm, target, s)
        score = err + (0.0 if penalty is None else penalty(q))
        if score < best_score:
            best, best_score = q, score
    return best, best_score


def joint_interpolation(q_from, q_to, n):
    """``n`` configurations from q_from (inclusive) to q_to (inclusive)."""
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) * np.asarray(q_from, float) + t * np.asarray(q_to, float)

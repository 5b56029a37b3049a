"""Grasp trajectory planning on an estimated implicit surface.

The gripper midpoint is driven to the centroid of the estimated surface with
its orientation matched to the surface's principal axes in two of the three
Euler angles; each choice of the free angle is solved separately and the
cheapest feasible plan wins.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import planning
from .arm import N_JOINTS, ArmModel, jaw_midpoint, midpoint_pose_vectors, solve_ik, within_limits, wrist_transform
from .errors import NoFeasibleGrasp
from .geom import Pose6, PointCloud, dump_json, invert_transform, pca_pose, wrap_angle
from .gpis import GpisModel, SurfaceSet
from .nlopt import SolveOptions, SolveReport, solve
from .sdf import TableBox

log = logging.getLogger(__name__)

DEFAULT_HORIZON = 10
DEFAULT_GRASP_WEIGHT = 0.5
ANGLE_BAND = 0.01
REACH_TOL = 0.015
CLEARANCE = 0.01
GRASP_OPTIONS = SolveOptions(max_outer=30, max_inner=150, ftol=1e-9, gtol=1e-9)


@dataclass
class GraspCandidate:
    free_angle_index: int
    cost: float
    report: SolveReport
    reach_error: float
    feasible: bool


@dataclass
class GraspPlan:
    """Chosen grasp.

    ``trajectory`` holds the H planned configurations (the start
    configuration excluded); ``free_angle_index`` is 1, 2 or 3 for roll,
    pitch, yaw.
    """

    trajectory: np.ndarray
    free_angle_index: int
    cost: float
    target_pose: Pose6
    start: np.ndarray
    candidates: list = field(default_factory=list)

    @property
    def final_configuration(self):
        return self.trajectory[-1]

    def full_trajectory(self):
        return np.vstack([self.start[None, :], self.trajectory])

    def to_dict(self):
        return {
            "free_angle_index": int(self.free_angle_index),
            "cost": float(self.cost),
            "target_pose": self.target_pose.to_dict(),
            "start": [float(v) for v in self.start],
            "trajectory": [[float(v) for v in row] for row in self.trajectory],
            "candidates": [
                {"free_angle_index": c.free_angle_index, "cost": float(c.cost), "converged": bool(c.report.converged),
                 "max_violation": float(c.report.max_violation), "reach_error": float(c.reach_error),
                 "feasible": bool(c.feasible)}
                for c in self.candidates
            ],
        }

    def save_json(self, path):
        dump_json(self.to_dict(), path)


def grasp_waypoints(x0: Pose6, xf: Pose6, H: int):
    """Linear task-space waypoints x_1..x_H from x0 to xf (angles on the shortest arc)."""
    if H < 2:
        raise ValueError("H must be at least 2")
    return planning.interpolate_poses(x0, xf, H)


def _constrained_mask(f):
    if f not in (1, 2, 3):
        raise ValueError("free angle index must be 1, 2 or 3")
    mask = np.ones(3, dtype=bool)
    mask[f - 1] = False
    return mask


def _pose_vec(p: Pose6):
    return np.concatenate([p.position, p.rpy])


def grasp_cost(arm: ArmModel, traj, waypoints, target: Pose6, p_g: float, f: int) -> float:
    """Tracking cost of a grasp trajectory ``traj = [q_1..q_H]``.

    ``p_g * |mid(q_H) - target|^2`` over position and the two constrained
    Euler angles, plus the squared position error of q_k against waypoint k
    for k < H. Waypoints beyond H-1 are ignored.
    """
    traj = np.atleast_2d(np.asarray(traj, dtype=float))
    H = traj.shape[0]
    if len(waypoints) < H - 1:
        raise ValueError("need one waypoint per configuration before the last")
    V = midpoint_pose_vectors(arm, traj)
    mask = _constrained_mask(f)
    tgt = _pose_vec(target)
    final = np.sum((V[-1, :3] - tgt[:3]) ** 2) + np.sum(wrap_angle(V[-1, 3:] - tgt[3:])[mask] ** 2)
    wp = np.array([w.position for w in waypoints[:H - 1]]).reshape(-1, 3)
    track = np.sum((V[:-1, :3] - wp) ** 2)
    return float(p_g * final + track)


def _grasp_problem(arm, q0, waypoints, target, p_g, f, cloud, table, epsilon):
    H = len(waypoints)
    wp = np.array([_pose_vec(w) for w in waypoints])
    mask = _constrained_mask(f)
    cost = planning.PoseTrackingCost(arm, wp, _pose_vec(target), p_g, final_angles=tuple(mask),
                                     waypoint_angles=(False, False, False), angle_scale=1.0)
    cons = []
    clear = planning.WaypointConstraint(planning.clearance_term(arm, cloud, epsilon))
    cons.append((clear, clear.jac))
    if table is not None:
        tab = planning.WaypointConstraint(planning.table_term(arm, table, epsilon))
        cons.append((tab, tab.jac))
    band_fn, band_jac = planning.orientation_band(arm, target.rpy, np.flatnonzero(mask), ANGLE_BAND)
    cons.append((band_fn, band_jac))
    return planning.make_problem(arm, q0, cost, cons, H + 1)


def _ik_init(arm, q0, target, f, penalty, rng):
    mask = _constrained_mask(f)
    best, best_score = None, np.inf
    seeds = [q0, arm.limit_midpoint()] + [np.clip(q0 + rng.normal(0, 0.6, N_JOINTS), arm.lower, arm.upper)
                                          for _ in range(4)]
    for s in seeds:
        q, err = solve_ik(arm, target, s, angle_mask=mask)
        score = err + penalty(q)
        if score < best_score:
            best, best_score = q, score
    return best


def plan_grasp(arm: ArmModel, gpis: GpisModel, surface: SurfaceSet, obstacles: PointCloud | None, q0,
               H: int = DEFAULT_HORIZON, table: TableBox | None = None, p_g: float = DEFAULT_GRASP_WEIGHT,
               epsilon: float = CLEARANCE, seed: int = 0, opts: SolveOptions | None = None) -> GraspPlan:
    """Plan a grasp of the estimated surface from configuration ``q0``.

    Clearance is enforced against ``obstacles`` (defaults to the surface
    points) and, when given, the table box. A candidate is feasible when its
    solve converges and the final jaw midpoint is within 15 mm of the target.
    Raises NoFeasibleGrasp when no free-angle choice gives a feasible plan.
    """
    q0 = np.asarray(q0, dtype=float)
    if len(surface) == 0:
        raise ValueError("surface is empty")
    if not within_limits(arm, q0):
        raise ValueError("q0 violates joint limits")
    target = pca_pose(surface.points, allow_degenerate=True).pose
    cloud = surface.points if obstacles is None else np.asarray(
        obstacles.points if isinstance(obstacles, PointCloud) else obstacles, dtype=float)
    start_pose = jaw_midpoint(arm, q0)
    rng = np.random.default_rng(seed)
    opts = opts or GRASP_OPTIONS

    clear_fn = planning.clearance_term(arm, cloud, epsilon)
    table_fn = planning.table_term(arm, table, epsilon) if table is not None else None

    def penalty(q):
        Q = np.asarray(q)[None, None, :]
        v = np.max(clear_fn(Q), initial=0.0)
        if table_fn is not None:
            v = max(v, np.max(table_fn(Q), initial=0.0))
        return 10.0 * max(v, 0.0)

    candidates = []
    for f in (1, 2, 3):
        mask = _constrained_mask(f)
        q_goal = _ik_init(arm, q0, target, f, penalty, rng)
        # use the orientation the IK settled on for the free angle
        reached = jaw_midpoint(arm, q_goal)
        goal_rpy = np.where(mask, target.rpy, reached.rpy)
        waypoints = grasp_waypoints(start_pose, Pose6(target.position, goal_rpy), H)
        problem = _grasp_problem(arm, q0, waypoints, target, p_g, f, cloud, table, epsilon)
        init = planning.joint_interpolation(q0, q_goal, H + 1)
        rep = solve(problem, init, opts)
        traj = rep.trajectory[1:]
        reach = float(np.linalg.norm(jaw_midpoint(arm, traj[-1]).position - target.position))
        cost = grasp_cost(arm, traj, waypoints, target, p_g, f)
        ok = bool(rep.converged and reach <= REACH_TOL)
        log.info("grasp f=%d cost=%.4g viol=%.2e reach=%.4f feasible=%s", f, cost, rep.max_violation, reach, ok)
        candidates.append(GraspCandidate(f, cost, rep, reach, ok))

    feasible = [c for c in candidates if c.feasible]
    if not feasible:
        raise NoFeasibleGrasp("no free-angle choice produced a feasible grasp")
    best = min(feasible, key=lambda c: c.cost)
    return GraspPlan(best.report.trajectory[1:].copy(), best.free_angle_index, best.cost, target, q0.copy(),
                     candidates)


def grasp_transform(arm: ArmModel, q_grasp):
    """Object-to-wrist attachment: maps initial world coordinates into the wrist frame at grasp."""
    return invert_transform(wrist_transform(arm, np.asarray(q_grasp, dtype=float)))


def grasp_violation(arm: ArmModel, plan: GraspPlan, cloud, table=None, epsilon=CLEARANCE):
    """Largest clearance or table violation over the planned configurations."""
    Q = plan.trajectory[:, None, :]
    v = np.max(planning.clearance_term(arm, cloud, epsilon)(Q), initial=0.0)
    if table is not None:
        v = max(v, np.max(planning.table_term(arm, table, epsilon)(Q), initial=0.0))
    return float(max(v, 0.0))

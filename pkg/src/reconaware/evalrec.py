"""Trajectory execution in simulation, known-pose fusion, reconstruction metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .arm import N_JOINTS, ArmModel
from .cem import (DEFAULT_LENGTH, TRANSITION_OPTIONS, TransitionConstraints, goal_error, object_transforms, reaches_goal,
                  solve_transition)
from .errors import EmptyRecon, Infeasible, NoGoalReached, NoHeadroom
from .geom import Pose6, PointCloud, TriMesh, apply_transform, dump_json, invert_transform, write_ply
from .nlopt import SolveOptions
from .scene import Scene, remove_table_points, render_depth
from .sdf import CameraModel


def closest_point_on_triangles(P, A, B, C):
    """Closest points on triangles (A, B, C) to points P, all broadcastable (..., 3).

    Region-based closed form (vertex, edge and face Voronoi regions).
    """
    ab, ac, ap = B - A, C - A, P - A
    d1 = np.sum(ab * ap, -1)
    d2 = np.sum(ac * ap, -1)
    bp = P - B
    d3 = np.sum(ab * bp, -1)
    d4 = np.sum(ac * bp, -1)
    cp = P - C
    d5 = np.sum(ab * cp, -1)
    d6 = np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    shape = np.broadcast(d1, d2).shape
    out = np.empty(shape + (3,))
    done = np.zeros(shape, dtype=bool)

    def put(mask, val):
        m = mask & ~done
        if np.any(m):
            out[m] = np.broadcast_to(val, shape + (3,))[m]
            done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        put((d1 <= 0) & (d2 <= 0), A)
        put((d3 >= 0) & (d4 <= d3), B)
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), A + v[..., None] * ab)
        put((d6 >= 0) & (d5 <= d6), C)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), A + w[..., None] * ac)
        w2 = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), B + w2[..., None] * (C - B))
        denom = 1.0 / (va + vb + vc)
        v3 = vb * denom
        w3 = vc * denom
        put(~done, A + v3[..., None] * ab + w3[..., None] * ac)
    return out


def point_mesh_distance(points, mesh, chunk=2_000_000):
    """Exact unsigned distance from each point to the nearest mesh triangle."""
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    tri = mesh.triangles
    nf = len(tri)
    step = max(1, chunk // max(nf, 1))
    out = np.empty(len(P))
    A, B, C = tri[None, :, 0], tri[None, :, 1], tri[None, :, 2]
    for s in range(0, len(P), step):
        p = P[s:s + step, None, :]
        q = closest_point_on_triangles(p, A, B, C)
        out[s:s + step] = np.sqrt(np.min(np.sum((q - p) ** 2, axis=-1), axis=1))
    return out


# ------------------------------------------------------------------ metrics


@dataclass
class ReconReport:
    hausdorff_mean: float
    hausdorff_max: float
    hausdorff_std: float
    coverage_fraction: float
    planner_id: str = ""
    n_points: int = 0

    FIELDS = ("planner_id", "hausdorff_mean", "hausdorff_std", "hausdorff_max", "coverage_fraction", "n_points")

    def __post_init__(self):
        if not 0.0 <= self.coverage_fraction <= 1.0:
            raise ValueError("coverage_fraction must lie in [0, 1]")
        if self.planner_id and self.planner_id not in PLANNERS:
            raise ValueError(f"unknown planner {self.planner_id!r}")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.FIELDS}

    def csv_row(self):
        return [_csv_value(getattr(self, k)) for k in self.FIELDS]

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.FIELDS)
            w.writerow(self.csv_row())

    def save_json(self, path):
        dump_json(self.to_dict(), path)


PLANNERS = ("gmm", "heuristic180", "direct")


def _csv_value(v):
    if isinstance(v, float):
        return repr(float(v))
    return v


def hausdorff(recon, truth: TriMesh, samples=None, seed=0):
    """One-directional distance statistics from reconstructed points to the true surface.

    Returns ``(mean, max, std)``. With ``samples`` set, at most that many
    reconstructed points are used (seeded uniform subset). Raises EmptyRecon
    for an empty reconstruction.
    """
    P = recon.points if isinstance(recon, PointCloud) else np.asarray(recon, dtype=float).reshape(-1, 3)
    if len(P) == 0:
        raise EmptyRecon("reconstruction has no points")
    if samples is not None and len(P) > samples:
        P = P[np.sort(np.random.default_rng(seed).choice(len(P), samples, replace=False))]
    d = point_mesh_distance(P, truth)
    return float(d.mean()), float(d.max()), float(d.std())


def coverage(recon, truth: TriMesh, radius=0.005, samples=10000, seed=0):
    """Fraction of area-weighted surface samples with a reconstructed point within ``radius``."""
    if samples < 100:
        raise ValueError("samples must be at least 100")
    P = recon.points if isinstance(recon, PointCloud) else np.asarray(recon, dtype=float).reshape(-1, 3)
    if len(P) == 0:
        return 0.0
    S, _ = truth.sample_surface(samples, np.random.default_rng(seed))
    d, _ = cKDTree(P).query(S, distance_upper_bound=radius * (1 + 1e-12))
    return float(np.mean(d <= radius))


def evaluate(recon, truth: TriMesh, planner_id="", radius=0.005, samples=10000, seed=0) -> ReconReport:
    mean, mx, std = hausdorff(recon, truth)
    cov = coverage(recon, truth, radius, samples, seed)
    n = len(recon.points if isinstance(recon, PointCloud) else recon)
    return ReconReport(mean, mx, std, cov, planner_id, int(n))


# ---------------------------------------------------------------- baselines


def _require(report, what, arm, goal):
    if not report.converged:
        raise Infeasible(f"{what}: {report.message}", report)
    q_end = report.trajectory[-1]
    if not reaches_goal(arm, q_end, goal):
        dp, da = goal_error(arm, q_end, goal)
        raise NoGoalReached(f"{what} ends {dp * 1000:.1f} mm / {da:.3f} rad from the goal")
    return report.trajectory


def plan_direct(arm: ArmModel, x_d: Pose6, q_grasp, constraints: TransitionConstraints, M=DEFAULT_LENGTH,
                seed=0, opts: SolveOptions | None = None):
    """One transition solve straight to the goal pose, without the viewing-cone constraint."""
    cons = constraints.without_cone()
    rep = solve_transition(cons, np.asarray(q_grasp, dtype=float), x_d, M, None, rng=np.random.default_rng(seed),
                           opts=opts or TRANSITION_OPTIONS)
    return _require(rep, "direct transition", arm, x_d)


def wrist_sweep_delta(arm: ArmModel, q):
    """+pi when the last joint can turn half a revolution upward, else -pi; NoHeadroom if neither."""
    q7 = float(np.asarray(q)[N_JOINTS - 1])
    if q7 + np.pi <= arm.upper[N_JOINTS - 1]:
        return np.pi
    if q7 - np.pi >= arm.lower[N_JOINTS - 1]:
        return -np.pi
    raise NoHeadroom("last joint cannot rotate by pi in either direction")


def plan_heuristic180(arm: ArmModel, x_d: Pose6, q_grasp, constraints: TransitionConstraints, M=DEFAULT_LENGTH,
                      seed=0, opts: SolveOptions | None = None):
    """Turn the last joint half a revolution, then move to the goal.

    The first M//2 segments sweep joint 7 linearly by +/-pi; the remainder
    is a transition solve (no viewing-cone constraint) to ``x_d``.
    """
    q_grasp = np.asarray(q_grasp, dtype=float)
    delta = wrist_sweep_delta(arm, q_grasp)
    h = M // 2
    prefix = np.repeat(q_grasp[None, :], h + 1, axis=0)
    prefix[:, N_JOINTS - 1] += np.linspace(0.0, delta, h + 1)
    cons = constraints.without_cone()
    rep = solve_transition(cons, prefix[-1], x_d, M - h, None, rng=np.random.default_rng(seed),
                           opts=opts or TRANSITION_OPTIONS)
    suffix = _require(rep, "heuristic transition", arm, x_d)
    return np.vstack([prefix, suffix[1:]])


# --------------------------------------------------------------- execution


@dataclass(frozen=True, eq=False)
class FusedCloud:
    """Object points accumulated over a trajectory, in initial world coordinates."""

    points: PointCloud
    source: np.ndarray  # first waypoint contributing to each point

    def __len__(self):
        return len(self.points)

    def save_ply(self, path):
        write_ply(path, self.points.points, scalars={"waypoint": self.source.astype(float)})


def _voxel_with_source(P, src, voxel):
    if len(P) == 0:
        return P.reshape(0, 3), np.zeros(0, dtype=int)
    keys = np.floor(P / voxel).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    out = np.zeros((len(counts), 3))
    np.add.at(out, inv, P)
    first = np.full(len(counts), np.iinfo(np.int64).max)
    np.minimum.at(first, inv, src)
    return out / counts[:, None], first


def execute_and_fuse(scene: Scene, camera: CameraModel, arm: ArmModel, traj, grasp_tf, noise_sigma=0.0, seed=0,
                     voxel=0.002, table_tol=0.005) -> FusedCloud:
    """Render the true object along the trajectory and fuse its points with known poses.

    The object follows ``wrist(q) @ grasp_tf``. Each waypoint's frame uses its
    own noise stream; points within ``table_tol`` of the table box are
    dropped, the rest are mapped back to initial coordinates and voxel
    averaged (``voxel`` <= 0 disables averaging).
    """
    traj = np.atleast_2d(np.asarray(traj, dtype=float))
    Ts = object_transforms(arm, traj, grasp_tf)
    pts, src = [], []
    for i, T in enumerate(Ts):
        frame = render_depth(scene, camera, noise_sigma, _substream(seed, i), object_transform=T)
        world = frame.world_points()
        keep = remove_table_points(world, scene.table, table_tol) if scene.table is not None else np.ones(
            len(world), dtype=bool)
        if not np.any(keep):
            continue
        pts.append(apply_transform(invert_transform(T), world[keep]))
        src.append(np.full(int(keep.sum()), i))
    P = np.vstack(pts) if pts else np.zeros((0, 3))
    S = np.concatenate(src) if src else np.zeros(0, dtype=int)
    if voxel and voxel > 0:
        P, S = _voxel_with_source(P, S, voxel)
    return FusedCloud(PointCloud(P), S)


def _substream(seed, i):
    return int(np.random.default_rng([int(seed), int(i)]).integers(2 ** 31))

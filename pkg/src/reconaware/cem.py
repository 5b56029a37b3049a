"""Reconstruction-aware transition planning.

Cross-entropy search over fixed-length joint trajectories. The importance
density is a Gaussian mixture refit by EM to an elite set; a trajectory's
cost is the negative conditional entropy of the estimated surface points the
camera would see along it, found by casting beam rays against the estimated
surface carried rigidly by the gripper.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.transform import Rotation
from scipy.special import logsumexp

from . import planning
from .arm import N_JOINTS, ArmModel, jaw_midpoint, midpoint_pose_vectors, solve_ik, wrist_transform
from .errors import AllInfeasible, NoGoalReached, SamplingStalled, TooFewElites
from .geom import Pose6, PointCloud, apply_transform, dump_json, matrix_to_rpy, wrap_angle
from .gpis import GpisModel, SurfaceSet, conditional_entropy, jittered_cholesky
from .nlopt import SolveOptions, SolveReport, solve
from .sdf import CameraModel, TableBox

log = logging.getLogger(__name__)

DEFAULT_LENGTH = 15
DEFAULT_TRANSITION_WEIGHT = 0.5
WORST_COST = 1e6
GOAL_POS_TOL = 0.02
GOAL_ANG_TOL = 0.2
REG_COVAR = 1e-6
BEAM_FACTOR = 1.5
MAX_SAMPLE_BATCH = 16384
TRANSITION_OPTIONS = SolveOptions(max_outer=10, max_inner=60, ftol=1e-7, gtol=1e-7)
CONVERGENCE_REASONS = ("best_cost_stalled", "elite_threshold_met", "iteration_cap")


# ---------------------------------------------------------------- constraints


@dataclass
class TransitionConstraints:
    """Constraints on a transition trajectory carrying a grasped object.

    ``grasp_tf`` maps initial world coordinates into the wrist frame, so an
    object point ``p`` sits at ``wrist(q) @ grasp_tf @ p`` for configuration
    ``q``. The cone constraint keeps ``object_point`` (the estimated centroid)
    inside the viewing cone; clearance keeps every link sphere ``epsilon``
    away from the table box and from ``obstacles`` when given.
    """

    arm: ArmModel
    camera: CameraModel
    grasp_tf: np.ndarray
    object_point: np.ndarray
    table: Optional[TableBox] = None
    obstacles: Optional[np.ndarray] = None
    epsilon: float = 0.01
    use_cone: bool = True
    tol: float = 1e-4

    def __post_init__(self):
        self.grasp_tf = np.asarray(self.grasp_tf, dtype=float)
        self.object_point = np.asarray(self.object_point, dtype=float).reshape(3)
        self._cone = planning.cone_term(self.arm, self.camera, self.grasp_tf, self.object_point)
        self._table = planning.table_term(self.arm, self.table, self.epsilon) if self.table is not None else None
        self._clear = None
        if self.obstacles is not None and len(self.obstacles):
            self._clear = planning.clearance_term(self.arm, self.obstacles, self.epsilon)

    def terms(self):
        out = []
        if self.use_cone:
            out.append(self._cone)
        if self._table is not None:
            out.append(self._table)
        if self._clear is not None:
            out.append(self._clear)
        return out

    def for_problem(self):
        """(constraint, jacobian) pairs for the solver; the fixed start waypoint is skipped."""
        pairs = []
        for fn in self.terms():
            c = planning.WaypointConstraint(fn)
            pairs.append((c, c.jac))
        return pairs

    def violations(self, trajs):
        """Largest violation per trajectory for a (B, M, 7) batch (joint limits included)."""
        T = np.asarray(trajs, dtype=float)
        single = T.ndim == 2
        if single:
            T = T[None]
        Q = np.swapaxes(T[:, 1:], 0, 1)  # (M-1, B, 7)
        v = np.zeros(T.shape[0])
        for fn in self.terms():
            v = np.maximum(v, np.max(fn(Q), axis=(0, 2)))
        lim = np.maximum(self.arm.lower - T[:, 1:], T[:, 1:] - self.arm.upper)
        v = np.maximum(v, lim.max(axis=(1, 2)))
        v = np.maximum(v, 0.0)
        return float(v[0]) if single else v

    def feasible(self, trajs):
        """Boolean per trajectory; cheap joint-limit test first, kinematic tests on the survivors."""
        T = np.asarray(trajs, dtype=float)
        single = T.ndim == 2
        if single:
            T = T[None]
        tail = T[:, 1:]
        ok = np.all((tail >= self.arm.lower - self.tol) & (tail <= self.arm.upper + self.tol), axis=(1, 2))
        for fn in self.terms():
            idx = np.nonzero(ok)[0]
            if len(idx) == 0:
                break
            v = fn(np.swapaxes(tail[idx], 0, 1)).max(axis=(0, 2))
            ok[idx[v > self.tol]] = False
        return bool(ok[0]) if single else ok

    def without_cone(self):
        return TransitionConstraints(self.arm, self.camera, self.grasp_tf, self.object_point, self.table,
                                     self.obstacles, self.epsilon, False, self.tol)


def goal_error(arm: ArmModel, q, goal: Pose6, angle_mask=(True, True, True)):
    """(position error, largest wrapped angle error over the masked angles)."""
    v = midpoint_pose_vectors(arm, np.asarray(q, dtype=float))
    dp = float(np.linalg.norm(v[:3] - goal.position))
    da = np.abs(wrap_angle(v[3:] - goal.rpy))[np.asarray(angle_mask, dtype=bool)]
    return dp, float(da.max(initial=0.0))


def reaches_goal(arm, q, goal, pos_tol=GOAL_POS_TOL, ang_tol=GOAL_ANG_TOL, angle_mask=(True, True, True)):
    dp, da = goal_error(arm, q, goal, angle_mask)
    return dp <= pos_tol and da <= ang_tol


def transition_waypoints(x0: Pose6, goal: Pose6, M: int, via: Optional[Pose6] = None):
    """Task-space targets for waypoints 1..M-1.

    Without ``via`` this is straight-line interpolation to ``goal``. With a
    via pose the first half interpolates to ``via`` and the second half from
    ``via`` to ``goal``.
    """
    n = M - 1
    if via is None:
        return planning.interpolate_poses(x0, goal, n)
    half = n // 2
    return planning.interpolate_poses(x0, via, half) + planning.interpolate_poses(via, goal, n - half)


def transition_problem(cons: TransitionConstraints, q_start, goal: Pose6, M=DEFAULT_LENGTH, via=None,
                       p_t=DEFAULT_TRANSITION_WEIGHT, angle_scale=planning.ANGLE_SCALE):
    arm = cons.arm
    x0 = jaw_midpoint(arm, q_start)
    wps = transition_waypoints(x0, goal, M, via)
    wp = np.array([np.concatenate([w.position, w.rpy]) for w in wps])
    cost = planning.PoseTrackingCost(arm, wp, np.concatenate([goal.position, goal.rpy]), p_t,
                                     final_angles=(True, True, True), waypoint_angles=(True, True, True),
                                     angle_scale=angle_scale)
    return planning.make_problem(arm, q_start, cost, cons.for_problem(), M), wps


def transition_init(arm: ArmModel, q_start, goal: Pose6, M, via=None, rng=None):
    """Joint-space initial guess through IK solutions at the via pose and the goal."""
    rng = np.random.default_rng(0) if rng is None else rng
    q_start = np.asarray(q_start, dtype=float)

    def ik(target, seed_q):
        best, best_err = None, np.inf
        for s in (seed_q, np.clip(seed_q + rng.normal(0, 0.3, N_JOINTS), arm.lower, arm.upper)):
            q, err = solve_ik(arm, target, s, iters=100)
            if err < best_err:
                best, best_err = q, err
        return best

    if via is None:
        return planning.joint_interpolation(q_start, ik(goal, q_start), M)
    q_via = ik(via, q_start)
    q_goal = ik(goal, q_via)
    n = M - 1
    half = n // 2
    first = planning.joint_interpolation(q_start, q_via, half + 1)
    second = planning.joint_interpolation(q_via, q_goal, n - half + 1)[1:]
    return np.vstack([first, second])


def solve_transition(cons: TransitionConstraints, q_start, goal: Pose6, M=DEFAULT_LENGTH, via=None,
                     p_t=DEFAULT_TRANSITION_WEIGHT, rng=None, opts: SolveOptions | None = None) -> SolveReport:
    problem, _ = transition_problem(cons, q_start, goal, M, via, p_t)
    init = transition_init(cons.arm, q_start, goal, M, via, rng)
    return solve(problem, init, opts or TRANSITION_OPTIONS)


@dataclass
class InitialTrajectory:
    trajectory: np.ndarray
    surrogate_rpy: np.ndarray
    converged: bool
    reaches_goal: bool
    max_violation: float


def random_orientations(n, seed):
    """``n`` orientations uniform on SO(3), as extrinsic XYZ angles."""
    R = Rotation.random(n, random_state=np.random.default_rng(seed)).as_matrix()
    return matrix_to_rpy(R)


def init_trajectories(arm: ArmModel, x_d: Pose6, N_o: int, q_grasp, constraints: TransitionConstraints, seed=0,
                      M=DEFAULT_LENGTH, p_t=DEFAULT_TRANSITION_WEIGHT, opts: SolveOptions | None = None):
    """Diverse initial trajectories toward the goal.

    Each of the ``N_o`` surrogate goals has the goal's position and a uniformly
    random orientation; it serves as a via pose that the trajectory passes
    through before settling at ``x_d``. Non-converged solves are returned too,
    flagged. Raises AllInfeasible when none converges.
    """
    if N_o < 2:
        raise ValueError("N_o must be at least 2")
    if constraints.arm is not arm:
        constraints = TransitionConstraints(arm, constraints.camera, constraints.grasp_tf, constraints.object_point,
                                            constraints.table, constraints.obstacles, constraints.epsilon,
                                            constraints.use_cone, constraints.tol)
    rpys = random_orientations(N_o, seed)
    rng = np.random.default_rng([seed, 1])
    out = []
    for i, rpy in enumerate(rpys):
        via = Pose6(x_d.position, rpy)
        rep = solve_transition(constraints, q_grasp, x_d, M, via, p_t, rng, opts)
        ok_goal = reaches_goal(arm, rep.trajectory[-1], x_d)
        out.append(InitialTrajectory(rep.trajectory, np.asarray(rpy), bool(rep.converged), ok_goal,
                                     rep.max_violation))
        log.debug("init %d converged=%s goal=%s viol=%.2e", i, rep.converged, ok_goal, rep.max_violation)
    if not any(t.converged for t in out):
        raise AllInfeasible("no initial trajectory satisfied the constraints")
    return out


# ----------------------------------------------------------------- raycasting


def beam_radius(surface: SurfaceSet):
    return BEAM_FACTOR * surface.spacing


def _ray_hits(points_cam, dirs, r_beam):
    """Index of the nearest point within ``r_beam`` of each ray (-1 for none).

    ``points_cam`` are in the camera frame, ``dirs`` unit beam directions.
    Ties in axial distance go to the lower point index.
    """
    n_rays = len(dirs)
    hits = np.full(n_rays, -1)
    if len(points_cam) == 0:
        return hits
    c = points_cam.mean(axis=0)
    rad = np.sqrt(np.max(np.sum((points_cam - c) ** 2, axis=1)))
    tc = dirs @ c
    perp_c = np.sqrt(np.maximum(c @ c - tc ** 2, 0.0))
    cand = np.nonzero((perp_c <= rad + r_beam + 1e-9) & (tc > -rad - r_beam))[0]
    if len(cand) == 0:
        return hits
    D = dirs[cand]
    t = points_cam @ D.T  # (N, R)
    perp2 = np.sum(points_cam ** 2, axis=1)[:, None] - t ** 2
    ok = (t > 0) & (perp2 <= r_beam ** 2)
    tt = np.where(ok, t, np.inf)
    best = np.argmin(tt, axis=0)
    found = np.isfinite(tt[best, np.arange(len(cand))])
    hits[cand[found]] = best[found]
    return hits


def object_transforms(arm: ArmModel, traj, grasp_tf):
    """World transforms (M, 4, 4) of the grasped object along a trajectory."""
    W = wrist_transform(arm, np.asarray(traj, dtype=float))
    return W @ np.asarray(grasp_tf, dtype=float)


def raycast_indices(surface: SurfaceSet, gpis: GpisModel, camera: CameraModel, traj, arm: ArmModel, grasp_tf,
                    r_beam=None):
    """Sorted indices into ``surface.points`` seen by the camera along ``traj``."""
    r_beam = beam_radius(surface) if r_beam is None else float(r_beam)
    P = surface.points
    if len(P) == 0:
        return np.zeros(0, dtype=int)
    mean = surface.mean if len(surface.mean) == len(P) else gpis.posterior(P)[0]
    accept = mean <= gpis.hyper.eta
    traj = np.atleast_2d(np.asarray(traj, dtype=float))
    seen = np.zeros(len(P), dtype=bool)
    for T in object_transforms(arm, traj, grasp_tf):
        cam_pts = apply_transform(camera.T_cam_world @ T, P)
        h = _ray_hits(cam_pts, camera.beam, r_beam)
        h = h[h >= 0]
        seen[h[accept[h]]] = True
    return np.nonzero(seen)[0]


def raycast_gpis(surface: SurfaceSet, gpis: GpisModel, camera: CameraModel, traj, arm: ArmModel, grasp_tf,
                 r_beam=None) -> PointCloud:
    """Estimated surface points (original coordinates) visible along the trajectory."""
    idx = raycast_indices(surface, gpis, camera, traj, arm, grasp_tf, r_beam)
    return PointCloud(surface.points[idx])


def trajectory_cost(gpis: GpisModel, s_c, seed=0, worst_cost=WORST_COST) -> float:
    """Negative conditional entropy of the visible set; ``worst_cost`` if nothing is visible."""
    P = s_c.points if isinstance(s_c, PointCloud) else np.asarray(s_c, dtype=float).reshape(-1, 3)
    if len(P) == 0:
        return float(worst_cost)
    return float(-conditional_entropy(gpis, P, seed=seed))


# ------------------------------------------------------------------------ GMM


@dataclass
class GmmPolicy:
    means: np.ndarray  # (K, D)
    covariances: np.ndarray  # (K, D, D)
    weights: np.ndarray  # (K,)
    log_likelihood: list = field(default_factory=list)

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covariances = np.asarray(self.covariances, dtype=float).reshape(
            len(self.means), self.means.shape[1], self.means.shape[1])
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative with a positive sum")
        self.weights = w / w.sum()
        self._chol = None

    @property
    def n_components(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def cholesky_factors(self):
        if self._chol is None:
            self._chol = np.stack([jittered_cholesky(S, max(1.0, float(np.trace(S)) / len(S)))[0]
                                   for S in self.covariances])
        return self._chol

    def log_component_densities(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([_gauss_logpdf(X, m, L) for m, L in zip(self.means, self.cholesky_factors)], axis=1)

    def log_likelihood_of(self, X):
        return float(np.sum(logsumexp(self.log_component_densities(X) + np.log(self.weights), axis=1)))

    def to_dict(self):
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "log_likelihood": [float(v) for v in self.log_likelihood]}


def _gauss_logpdf(X, mean, L):
    z = solve_triangular(L, (X - mean).T, lower=True, check_finite=False)
    d = X.shape[1]
    return -0.5 * np.sum(z * z, axis=0) - np.sum(np.log(np.diag(L))) - 0.5 * d * np.log(2 * np.pi)


def _kmeans_pp(X, k, rng):
    centers = [X[rng.integers(len(X))]]
    for _ in range(1, k):
        d2 = np.min(np.sum((X[:, None, :] - np.array(centers)[None]) ** 2, axis=-1), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(len(X))])
        else:
            centers.append(X[rng.choice(len(X), p=d2 / total)])
    return np.array(centers)


def _m_step(X, resp, reg):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    means = (resp.T @ X) / nk[:, None]
    D = X.shape[1]
    covs = np.empty((len(nk), D, D))
    for k in range(len(nk)):
        diff = X - means[k]
        covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k] + reg * np.eye(D)
    return means, covs, nk / nk.sum()


def fit_gmm(elite, n_components: int, seed=0, reg=REG_COVAR, max_iter=100, tol=1e-8) -> GmmPolicy:
    """Fit a Gaussian mixture to flattened trajectories by EM.

    Seeding is k-means++ followed by hard assignment; covariances are the
    weighted maximum-likelihood estimates plus ``reg * I``. Iteration stops
    when the log-likelihood gain falls below ``tol`` (relative) or would
    decrease, so the recorded history is non-decreasing.
    """
    X = np.asarray([np.asarray(e, dtype=float).ravel() for e in elite])
    if len(X) < n_components:
        raise TooFewElites(f"{len(X)} elite samples for {n_components} components")
    if n_components < 1:
        raise ValueError("need at least one component")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(X, n_components, rng)
    assign = np.argmin(np.sum((X[:, None, :] - centers[None]) ** 2, axis=-1), axis=1)
    resp = np.zeros((len(X), n_components))
    resp[np.arange(len(X)), assign] = 1.0
    gmm = GmmPolicy(*_m_step(X, resp, reg))
    ll = gmm.log_likelihood_of(X)
    history = [ll]
    for _ in range(max_iter):
        logp = gmm.log_component_densities(X) + np.log(gmm.weights)
        resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        cand = GmmPolicy(*_m_step(X, resp, reg))
        ll_new = cand.log_likelihood_of(X)
        if ll_new < ll:
            break
        gmm = cand
        gain = ll_new - ll
        ll = ll_new
        history.append(ll)
        if gain <= tol * max(1.0, abs(ll)):
            break
    gmm.log_likelihood = history
    return gmm


def sample_constrained(gmm: GmmPolicy, N: int, constraints=None, seed=0, max_attempts=None, start=None,
                       n_joints=N_JOINTS, batch=None):
    """Rejection-sample ``N`` trajectories from the mixture.

    A draw picks component k with probability w_k and sets
    ``Z = mean_k + L_k r`` with ``r`` standard normal. When ``start`` is given
    the first waypoint is reset to it. ``constraints`` is either None, an
    object with a ``feasible(batch)`` method, or a callable returning a
    boolean per trajectory. Raises SamplingStalled after ``max_attempts``
    consecutive rejections (default 100 N).
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    max_attempts = 100 * N if max_attempts is None else int(max_attempts)
    rng = np.random.default_rng(seed)
    D = gmm.dim
    shape = (D // n_joints, n_joints) if D % n_joints == 0 else (1, D)
    L = gmm.cholesky_factors
    grow = batch is None
    batch = max(N, 16) if batch is None else int(batch)
    accepted = []
    fails = 0
    while len(accepted) < N:
        if grow and fails >= batch:
            batch = min(2 * batch, MAX_SAMPLE_BATCH)
        ks = rng.choice(gmm.n_components, size=batch, p=gmm.weights)
        r = rng.standard_normal((batch, D))
        Z = np.empty((batch, D))
        for k in range(gmm.n_components):
            m = ks == k
            Z[m] = gmm.means[k] + r[m] @ L[k].T
        T = Z.reshape((batch,) + shape)
        if start is not None:
            T[:, 0] = start
        if constraints is None:
            ok = np.ones(batch, dtype=bool)
        elif hasattr(constraints, "feasible"):
            ok = np.asarray(constraints.feasible(T), dtype=bool)
        else:
            ok = np.asarray(constraints(T), dtype=bool)
        for i in range(batch):
            if ok[i]:
                accepted.append((T[i].copy(), int(ks[i])))
                fails = 0
                if len(accepted) == N:
                    break
            else:
                fails += 1
                if fails >= max_attempts:
                    raise SamplingStalled(f"{fails} consecutive rejections")
    trajs = [a[0] for a in accepted]
    comps = np.array([a[1] for a in accepted])
    return SampleSet(trajs, comps)


class SampleSet(list):
    """List of sampled trajectories that also records the component of each draw."""

    def __init__(self, trajs, components):
        super().__init__(trajs)
        self.components = components


# ------------------------------------------------------------------ CEM loop


@dataclass
class CemIteration:
    iteration: int
    gamma: float
    elite_size: int
    batch_best: float
    best_cost: float
    n_scored: int

    def to_dict(self):
        g = self.gamma
        return {"iteration": self.iteration, "gamma": None if not np.isfinite(g) else float(g),
                "elite_size": self.elite_size, "batch_best": float(self.batch_best),
                "best_cost": float(self.best_cost), "n_scored": self.n_scored}


@dataclass
class CemState:
    """Result of a cross-entropy run; ``seen`` holds every scored sample as (x, cost)."""

    iteration: int
    gamma: float
    elite: list
    best: np.ndarray
    best_cost: float
    converged: bool
    reason: str
    history: list = field(default_factory=list)
    seen: list = field(default_factory=list)
    policy: Optional[GmmPolicy] = None


def elite_select(costs, gamma, min_size, fraction=0.1):
    """Indices with cost <= gamma; when fewer than ``min_size``, the best ceil(fraction n) (at least ``min_size``)."""
    costs = np.asarray(costs, dtype=float)
    idx = np.nonzero(costs <= gamma)[0]
    if len(idx) >= max(min_size, 1):
        return idx
    k = max(int(math.ceil(fraction * len(costs))), min_size, 1)
    return np.argsort(costs, kind="stable")[:k]


def cem_optimize(initial, score: Callable, sample: Callable, n_components=2, n_samples=None, percentile=10.0,
                 max_iter=10, eps=1e-3, delta=None, seed=0, elite_fraction=0.1, fit=fit_gmm) -> CemState:
    """Cross-entropy minimization over a mixture importance density.

    ``score(xs)`` returns one cost per sample; ``sample(gmm, n, seed)``
    draws ``n`` samples. The first elite set is the whole initial batch
    (threshold +inf). After each refit the threshold becomes the
    ``percentile`` of the new batch's costs, never increasing. Stops when
    the batch-best cost changes by at most ``eps`` (relative), when every
    elite beats ``delta``, or after ``max_iter`` refits.
    """
    X = [np.asarray(x, dtype=float) for x in initial]
    n_samples = len(X) if n_samples is None else n_samples
    costs = np.asarray(score(X), dtype=float)
    seen = list(zip(X, costs))
    gamma = np.inf
    i0 = int(np.argmin(costs))
    best, best_cost = X[i0], float(costs[i0])
    batch_best = best_cost
    history = [CemIteration(0, gamma, len(X), batch_best, best_cost, len(X))]
    reason = "iteration_cap"
    converged = False
    elite_idx = np.arange(len(X))
    gmm = None
    j = 0
    for j in range(1, max_iter + 1):
        elite_idx = elite_select(costs, gamma, n_components, elite_fraction)
        elite = [X[i] for i in elite_idx]
        gmm = fit(elite, n_components, seed=int(np.random.default_rng([seed, j, 0]).integers(2 ** 31)))
        X = list(sample(gmm, n_samples, int(np.random.default_rng([seed, j, 1]).integers(2 ** 31))))
        costs = np.asarray(score(X), dtype=float)
        seen.extend(zip(X, costs))
        gamma = min(float(np.percentile(costs, percentile)), gamma)
        i0 = int(np.argmin(costs))
        prev_batch_best = batch_best
        batch_best = float(costs[i0])
        if batch_best < best_cost:
            best, best_cost = X[i0], batch_best
        elite_now = costs[costs <= gamma]
        history.append(CemIteration(j, gamma, int(len(elite_now)), batch_best, best_cost, len(X)))
        if abs(batch_best - prev_batch_best) <= eps * max(abs(prev_batch_best), 1e-12):
            reason, converged = "best_cost_stalled", True
            break
        if delta is not None and len(elite_now) and float(elite_now.max()) <= delta:
            reason, converged = "elite_threshold_met", True
            break
    final_elite = [X[i] for i in elite_select(costs, gamma, n_components, elite_fraction)]
    return CemState(j, gamma, final_elite, best, best_cost, converged, reason, history, seen, gmm)


# ------------------------------------------------------------ full planner


@dataclass
class CemConfig:
    n_initial: int = 50
    n_components: int = 2
    length: int = DEFAULT_LENGTH
    percentile: float = 10.0
    max_iter: int = 10
    eps: float = 1e-3
    delta: Optional[float] = None
    p_t: float = DEFAULT_TRANSITION_WEIGHT
    goal_pos_tol: float = GOAL_POS_TOL
    goal_ang_tol: float = GOAL_ANG_TOL
    sample_attempts: int = 20000  # consecutive rejections allowed per requested sample

    def __post_init__(self):
        if self.n_initial < 2:
            raise ValueError("n_initial must be at least 2")
        if self.n_components < 1 or self.n_components > self.n_initial:
            raise ValueError("n_components must lie in [1, n_initial]")
        if self.length < 3:
            raise ValueError("length must be at least 3")
        if not 0 < self.percentile <= 100:
            raise ValueError("percentile must lie in (0, 100]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.sample_attempts < 1:
            raise ValueError("sample_attempts must be positive")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class ReconPlan:
    trajectory: np.ndarray
    cost: float
    visible: np.ndarray
    state: CemState
    initial: list

    def log_dict(self):
        s = self.state
        return {
            "iterations": [h.to_dict() for h in s.history],
            "convergence_reason": s.reason,
            "converged": bool(s.converged),
            "best_cost": float(self.cost),
            "visible_points": int(len(self.visible)),
            "initial": {"count": len(self.initial), "converged": int(sum(t.converged for t in self.initial)),
                        "reach_goal": int(sum(t.reaches_goal for t in self.initial))},
            "trajectory": [[float(v) for v in row] for row in self.trajectory],
        }


def plan_reconstruction_aware(arm: ArmModel, surface: SurfaceSet, gpis: GpisModel, camera: CameraModel,
                              constraints: TransitionConstraints, x_d: Pose6, q_grasp, grasp_tf,
                              config: CemConfig | None = None, seed=0, goal_seed=None, sample_seed=None,
                              opts: SolveOptions | None = None) -> ReconPlan:
    """Cross-entropy search for a goal-reaching trajectory that shows the most unexplored surface.

    Returns the lowest-cost trajectory ever scored whose final jaw-midpoint
    pose is within tolerance of ``x_d``. Raises AllInfeasible when no initial
    solve converges and NoGoalReached when no scored trajectory reaches the
    goal.
    """
    cfg = config or CemConfig()
    goal_seed = seed if goal_seed is None else goal_seed
    sample_seed = seed if sample_seed is None else sample_seed
    q_grasp = np.asarray(q_grasp, dtype=float)
    init = init_trajectories(arm, x_d, cfg.n_initial, q_grasp, constraints, goal_seed, cfg.length, cfg.p_t, opts)
    usable = [t.trajectory for t in init if t.converged]
    if len(usable) < cfg.n_components:
        raise AllInfeasible(f"only {len(usable)} initial trajectories converged")

    cache = {}

    def score_one(traj):
        key = np.asarray(traj).tobytes()
        if key not in cache:
            vis = raycast_gpis(surface, gpis, camera, traj, arm, grasp_tf)
            cache[key] = trajectory_cost(gpis, vis)
        return cache[key]

    def score(xs):
        return [score_one(x) for x in xs]

    def sample(gmm, n, s):
        return sample_constrained(gmm, n, constraints, s, max_attempts=cfg.sample_attempts * n, start=q_grasp)

    state = cem_optimize(usable, score, sample, cfg.n_components, cfg.n_initial, cfg.percentile, cfg.max_iter,
                         cfg.eps, cfg.delta, sample_seed)

    order = sorted(range(len(state.seen)), key=lambda i: (state.seen[i][1], i))
    for i in order:
        traj, cost = state.seen[i]
        if reaches_goal(arm, traj[-1], x_d, cfg.goal_pos_tol, cfg.goal_ang_tol) and constraints.feasible(traj):
            vis = raycast_indices(surface, gpis, camera, traj, arm, grasp_tf)
            return ReconPlan(np.asarray(traj).copy(), float(cost), vis, state, init)
    raise NoGoalReached("no scored trajectory ends within the goal tolerance")


def save_log(plan: ReconPlan, path, extra=None):
    d = plan.log_dict()
    if extra:
        d.update(extra)
    dump_json(d, path)

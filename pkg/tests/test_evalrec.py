import csv
import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from reconaware.arm import N_JOINTS, default_arm
from reconaware.cem import CemConfig, reaches_goal
from reconaware.errors import EmptyRecon, NoHeadroom
from reconaware.evalrec import (PLANNERS, ReconReport, closest_point_on_triangles, coverage, evaluate,
                                execute_and_fuse, hausdorff, point_mesh_distance, wrist_sweep_delta)
from reconaware.geom import PointCloud, Pose6
from reconaware.pipeline import (ScenarioConfig, bundled_scenario, execute, grasp, load_world, perceive,
                                 plan_transition)
from reconaware.scene import Scene, box_mesh, icosphere
from reconaware.sdf import CameraModel

ARM = default_arm()


# --------------------------------------------------------------- distances


@settings(max_examples=30)
@given(st.integers(0, 10 ** 6))
def test_closest_point_matches_sampled_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(3, 3))
    P = rng.normal(size=(5, 3)) * 1.5
    Q = closest_point_on_triangles(P, np.tile(a, (5, 1)), np.tile(b, (5, 1)), np.tile(c, (5, 1)))
    for p, q in zip(P, Q):
        d_oracle = oracles.point_triangle_distance(p, a, b, c, samples=40)
        step = max(np.linalg.norm(b - a), np.linalg.norm(c - a), np.linalg.norm(c - b)) / 40
        assert np.linalg.norm(p - q) <= d_oracle + 1e-12
        assert d_oracle - np.linalg.norm(p - q) <= step


def test_point_mesh_distance_box_faces():
    mesh = box_mesh([0.2, 0.1, 0.3])
    rng = np.random.default_rng(0)
    d = rng.uniform(0.001, 0.05, 50)
    # points above the top face's interior are at exactly their height offset
    P = np.column_stack([rng.uniform(-0.09, 0.09, 50), rng.uniform(-0.04, 0.04, 50), 0.15 + d])
    assert np.allclose(point_mesh_distance(P, mesh), d, atol=1e-12)
    # and a point beyond a corner is at its Euclidean distance to the corner
    corner = np.array([0.1, 0.05, 0.15])
    assert point_mesh_distance((corner + [0.03, 0.04, 0.0])[None], mesh)[0] == pytest.approx(0.05)


def test_hausdorff_matches_brute_force():
    mesh = icosphere(0.05, 2)
    rng = np.random.default_rng(1)
    P = rng.normal(size=(30, 3)) * 0.06
    d = np.array([min(oracles.point_triangle_distance(p, *mesh.vertices[f], samples=30) for f in mesh.faces)
                  for p in P])
    mean, mx, std = hausdorff(PointCloud(P), mesh)
    assert mean == pytest.approx(d.mean(), abs=2e-4)
    assert mx == pytest.approx(d.max(), abs=2e-4)
    assert std == pytest.approx(d.std(), abs=2e-4)


def test_hausdorff_on_surface_is_zero_and_empty_raises():
    mesh = icosphere(0.05, 2)
    P, _ = mesh.sample_surface(500, np.random.default_rng(0))
    assert hausdorff(P, mesh)[1] < 1e-12
    with pytest.raises(EmptyRecon):
        hausdorff(np.zeros((0, 3)), mesh)


def test_hausdorff_subsampling():
    mesh = icosphere(0.05, 2)
    P = np.random.default_rng(2).normal(size=(400, 3)) * 0.05
    full = hausdorff(P, mesh)
    sub = hausdorff(P, mesh, samples=100, seed=3)
    assert sub[1] <= full[1] + 1e-15
    assert sub == hausdorff(P, mesh, samples=100, seed=3)


# ---------------------------------------------------------------- coverage


def test_coverage_full_and_empty():
    mesh = icosphere(0.05, 3)
    P, _ = mesh.sample_surface(20000, np.random.default_rng(5))
    assert coverage(P, mesh) == 1.0
    assert coverage(np.zeros((0, 3)), mesh) == 0.0
    with pytest.raises(ValueError):
        coverage(P, mesh, samples=50)


def test_coverage_hemisphere():
    mesh = icosphere(0.05, 4)
    P, _ = mesh.sample_surface(40000, np.random.default_rng(6))
    upper = P[P[:, 2] > 0]
    c = coverage(upper, mesh, radius=0.005)
    # half the area plus a band of height about one radius below the equator (band fraction h / 2R)
    assert 0.5 <= c <= 0.5 + 0.005 / 0.1 + 0.02


@settings(max_examples=20)
@given(st.integers(0, 10 ** 6))
def test_coverage_monotone_in_points_and_radius(seed):
    rng = np.random.default_rng(seed)
    mesh = box_mesh([0.1, 0.1, 0.1])
    P = rng.uniform(-0.06, 0.06, (int(rng.integers(1, 200)), 3))
    Q = np.vstack([P, rng.uniform(-0.06, 0.06, (50, 3))])
    assert coverage(P, mesh, 0.01, 2000, seed=1) <= coverage(Q, mesh, 0.01, 2000, seed=1)
    assert coverage(P, mesh, 0.01, 2000, seed=1) <= coverage(P, mesh, 0.02, 2000, seed=1)


# ------------------------------------------------------------------ report


def test_report_validation():
    with pytest.raises(ValueError):
        ReconReport(0.0, 0.0, 0.0, 1.5)
    with pytest.raises(ValueError):
        ReconReport(0.0, 0.0, 0.0, 0.5, planner_id="random")
    for p in PLANNERS:
        ReconReport(0.0, 0.0, 0.0, 0.5, planner_id=p)


def test_report_csv_json_round_trip(tmp_path):
    r = ReconReport(0.0012345678901234, 0.004, 0.0007, 0.875, "gmm", 1234)
    r.save_csv(tmp_path / "m.csv")
    r.save_json(tmp_path / "m.json")
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == list(ReconReport.FIELDS)
    assert float(rows[1][1]) == r.hausdorff_mean  # repr keeps every digit
    d = json.loads((tmp_path / "m.json").read_text())
    assert ReconReport(**d) == r


def test_evaluate_counts_points():
    mesh = box_mesh([0.1, 0.1, 0.1])
    P, _ = mesh.sample_surface(300, np.random.default_rng(0))
    r = evaluate(PointCloud(P), mesh, "direct", samples=1000)
    assert r.n_points == 300 and r.hausdorff_max < 1e-12 and r.planner_id == "direct"


# ---------------------------------------------------------------- baselines


def test_wrist_sweep_direction():
    q = ARM.limit_midpoint()
    lo, hi = ARM.lower[-1], ARM.upper[-1]
    q[-1] = lo + 0.1
    assert wrist_sweep_delta(ARM, q) == np.pi
    q[-1] = hi - 0.1
    assert wrist_sweep_delta(ARM, q) == -np.pi
    narrow = dataclasses.replace(ARM, lower=np.r_[ARM.lower[:-1], -1.0], upper=np.r_[ARM.upper[:-1], 1.0])
    q[-1] = 0.0
    with pytest.raises(NoHeadroom):
        wrist_sweep_delta(narrow, q)


# ------------------------------------------------------------------ fusion


def _held_box_scene():
    mesh = box_mesh([0.08, 0.06, 0.1])
    return Scene(mesh, Pose6([0.7, 0.0, 0.3]), None, Pose6.identity(), Pose6.identity())


def _fusion_setup():
    scene = _held_box_scene()
    q = ARM.limit_midpoint()
    from reconaware.arm import wrist_transform
    from reconaware.geom import invert_transform
    W = wrist_transform(ARM, q)
    gtf = invert_transform(W)  # object moves rigidly with the wrist; identity at q
    center = scene.object_pose.position
    cam = CameraModel.looking_at(center + [0.0, -0.8, 0.2], center, rows=60, cols=60)
    traj = np.repeat(q[None], 6, axis=0)
    traj[:, -1] += np.linspace(0, 2.5, 6)
    return scene, cam, traj, gtf


def test_fusion_zero_noise_lies_on_mesh():
    scene, cam, traj, gtf = _fusion_setup()
    truth = scene.object_world_mesh()
    exact = execute_and_fuse(scene, cam, ARM, traj, gtf, noise_sigma=0.0, voxel=0.0)
    assert len(exact) > 100
    assert point_mesh_distance(exact.points.points, truth).max() < 1e-9
    fused = execute_and_fuse(scene, cam, ARM, traj, gtf, noise_sigma=0.0, voxel=0.002)
    assert len(fused) < len(exact)
    assert point_mesh_distance(fused.points.points, truth).max() <= 0.002 * np.sqrt(3)


def test_fusion_rotation_adds_views():
    scene, cam, traj, gtf = _fusion_setup()
    truth = scene.object_world_mesh()
    one = execute_and_fuse(scene, cam, ARM, traj[:1], gtf, voxel=0.0)
    many = execute_and_fuse(scene, cam, ARM, traj, gtf, voxel=0.0)
    assert np.all(one.source == 0)
    assert set(np.unique(many.source)) <= set(range(len(traj)))
    assert coverage(many.points, truth, samples=2000) > coverage(one.points, truth, samples=2000)


def test_fusion_noise_seeded():
    scene, cam, traj, gtf = _fusion_setup()
    a = execute_and_fuse(scene, cam, ARM, traj, gtf, noise_sigma=0.001, seed=4)
    b = execute_and_fuse(scene, cam, ARM, traj, gtf, noise_sigma=0.001, seed=4)
    c = execute_and_fuse(scene, cam, ARM, traj, gtf, noise_sigma=0.001, seed=5)
    assert np.array_equal(a.points.points, b.points.points)
    assert not np.array_equal(a.points.points, c.points.points)


def test_fusion_ply(tmp_path):
    scene, cam, traj, gtf = _fusion_setup()
    f = execute_and_fuse(scene, cam, ARM, traj[:2], gtf)
    f.save_ply(tmp_path / "f.ply")
    from reconaware.geom import read_ply
    pts = read_ply(tmp_path / "f.ply")
    pts = pts[0] if isinstance(pts, tuple) else pts
    assert np.allclose(np.asarray(pts).reshape(-1, 3), f.points.points, atol=1e-9)


# ------------------------------------------------------- sphere end to end

SMALL_CEM = CemConfig(n_initial=12, max_iter=3)


@pytest.fixture(scope="module")
def sphere_runs():
    cfg = ScenarioConfig(bundled_scenario("sphere"), seed=0, cem=SMALL_CEM).validate()
    world = load_world(cfg)
    per = perceive(world, cfg)
    plan = grasp(world, per, cfg)
    out = {}
    for name in PLANNERS:
        out[name] = plan_transition(world, per, plan, cfg, name)
    return cfg, world, per, plan, out


def test_baselines_reach_goal(sphere_runs):
    cfg, world, _, plan, runs = sphere_runs
    for name in PLANNERS:
        tr = runs[name]
        assert np.array_equal(tr.trajectory[0], plan.final_configuration)
        assert reaches_goal(world.arm, tr.trajectory[-1], world.scene.goal_pose)
        assert np.all(tr.trajectory >= world.arm.lower - 1e-9) and np.all(tr.trajectory <= world.arm.upper + 1e-9)


def test_heuristic_prefix_turns_last_joint(sphere_runs):
    cfg, world, _, plan, runs = sphere_runs
    T = runs["heuristic180"].trajectory
    h = cfg.cem.length // 2
    assert len(T) == cfg.cem.length
    assert np.allclose(T[:h + 1, :N_JOINTS - 1], plan.final_configuration[:N_JOINTS - 1])
    assert abs(abs(T[h, -1] - T[0, -1]) - np.pi) < 1e-12


def test_reconstruction_aware_sees_more(sphere_runs):
    _, _, _, _, runs = sphere_runs
    gmm = runs["gmm"]
    assert len(gmm.visible) > len(runs["direct"].visible)
    log = gmm.log_dict()
    assert log["convergence_reason"] in ("best_cost_stalled", "elite_threshold_met", "iteration_cap")
    assert len(log["iterations"]) == gmm.recon.state.iteration + 1  # entry 0 scores the initial set


def test_execute_pipeline_on_sphere(sphere_runs):
    cfg, world, _, _, runs = sphere_runs
    fused = execute(world, runs["direct"], cfg)
    truth = world.scene.object_world_mesh()
    assert len(fused) > 100
    # 1 mm sensor noise averaged into 2 mm voxels
    assert hausdorff(fused.points, truth)[0] < 0.002
    # at the grasp the object still rests on the table: the bottom band is filtered out
    rest = execute_and_fuse(world.scene, world.render_camera, world.arm, runs["direct"].trajectory[:1],
                            runs["direct"].grasp_tf, voxel=0.0)
    top = world.scene.table.top
    assert len(rest) > 0 and np.all(rest.points.points[:, 2] > top + 0.005 - 1e-9)
    seen_low = execute_and_fuse(world.scene, world.render_camera, world.arm, runs["direct"].trajectory[:1],
                                runs["direct"].grasp_tf, voxel=0.0, table_tol=0.0)
    assert np.any(seen_low.points.points[:, 2] <= top + 0.005)

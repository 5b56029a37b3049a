import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from reconaware.arm import default_arm, jaw_midpoint, midpoint_pose_vectors
from reconaware.errors import NoFeasibleGrasp
from reconaware.geom import Pose6, pca_pose, wrap_angle
from reconaware.gpis import SurfaceSet
from reconaware.grasp import (REACH_TOL, grasp_cost, grasp_transform, grasp_violation, grasp_waypoints, plan_grasp)
from reconaware.nlopt import SolveOptions
from reconaware.pipeline import ScenarioConfig, bundled_scenario, grasp, load_world, perceive
from reconaware.planning import clearance_term, table_term

ARM = default_arm()
angles = arrays(float, 3, elements=st.floats(-3, 3))
positions = arrays(float, 3, elements=st.floats(-1, 1))


def test_waypoints_constant():
    x = Pose6([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
    for w in grasp_waypoints(x, x, 5):
        assert np.allclose(w.position, x.position) and np.allclose(w.rpy, x.rpy)


def test_waypoints_linear_spacing():
    w = grasp_waypoints(Pose6([0, 0, 0]), Pose6([1, 0, 0]), 4)
    assert [p.position[0] for p in w] == [0.25, 0.5, 0.75, 1.0]


@given(positions, angles, positions, angles, st.integers(2, 12))
def test_waypoints_endpoint_and_shortest_arc(p0, a0, p1, a1, H):
    x0, xf = Pose6(p0, a0), Pose6(p1, a1)
    w = grasp_waypoints(x0, xf, H)
    assert len(w) == H
    assert np.allclose(w[-1].position, xf.position, atol=1e-12)
    assert np.allclose(wrap_angle(w[-1].rpy - xf.rpy), 0, atol=1e-9)
    steps = [wrap_angle(w[k].rpy - (w[k - 1].rpy if k else x0.rpy)) for k in range(H)]
    assert np.all(np.abs(np.array(steps)) <= np.pi / H + 1e-9)


def test_waypoints_need_two():
    with pytest.raises(ValueError):
        grasp_waypoints(Pose6([0, 0, 0]), Pose6([1, 0, 0]), 1)


def _random_traj(seed, H=6):
    rng = np.random.default_rng(seed)
    return ARM.lower + rng.random((H, 7)) * (ARM.upper - ARM.lower)


def cost_oracle(traj, waypoints, target, p_g, f):
    total = 0.0
    for k, q in enumerate(traj):
        m = jaw_midpoint(ARM, q)
        if k < len(traj) - 1:
            total += sum((m.position[i] - waypoints[k].position[i]) ** 2 for i in range(3))
        else:
            term = sum((m.position[i] - target.position[i]) ** 2 for i in range(3))
            for i in range(3):
                if i != f - 1:
                    d = (m.rpy[i] - target.rpy[i] + np.pi) % (2 * np.pi) - np.pi
                    term += d ** 2
            total += p_g * term
    return total


def test_cost_zero_on_exact_tracking():
    traj = _random_traj(0)
    V = midpoint_pose_vectors(ARM, traj)
    wps = [Pose6(v[:3], v[3:]) for v in V]
    target = Pose6(V[-1, :3], V[-1, 3:])
    for f in (1, 2, 3):
        assert grasp_cost(ARM, traj, wps, target, 0.5, f) == pytest.approx(0.0, abs=1e-20)


def test_cost_final_offset_only():
    traj = _random_traj(1)
    V = midpoint_pose_vectors(ARM, traj)
    wps = [Pose6(v[:3], v[3:]) for v in V]
    target = Pose6(V[-1, :3] + [0.03, 0, 0], V[-1, 3:])
    assert grasp_cost(ARM, traj, wps, target, 0.5, 2) == pytest.approx(0.5 * 0.03 ** 2, abs=1e-14)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("f", [1, 2, 3])
def test_cost_matches_resummation(seed, f):
    traj = _random_traj(seed)
    rng = np.random.default_rng(seed + 100)
    wps = [Pose6(rng.uniform(-1, 1, 3), rng.uniform(-3, 3, 3)) for _ in range(len(traj))]
    target = Pose6(rng.uniform(-1, 1, 3), rng.uniform(-3, 3, 3))
    assert abs(grasp_cost(ARM, traj, wps, target, 0.5, f) - cost_oracle(traj, wps, target, 0.5, f)) < 1e-12


def test_cost_ignores_free_angle():
    traj = _random_traj(3)
    V = midpoint_pose_vectors(ARM, traj)
    wps = [Pose6(v[:3], v[3:]) for v in V]
    rpy = V[-1, 3:].copy()
    rpy[1] += 0.7
    assert grasp_cost(ARM, traj, wps, Pose6(V[-1, :3], rpy), 0.5, 2) == pytest.approx(0.0, abs=1e-20)
    assert grasp_cost(ARM, traj, wps, Pose6(V[-1, :3], rpy), 0.5, 1) > 0.1


def test_cost_bad_free_index():
    traj = _random_traj(0)
    with pytest.raises(ValueError):
        grasp_cost(ARM, traj, [Pose6([0, 0, 0])] * 6, Pose6([0, 0, 0]), 0.5, 4)


@pytest.fixture(scope="module")
def planned():
    out = {}
    for name in ("sphere", "box", "tallbox"):
        cfg = ScenarioConfig(bundled_scenario(name)).validate()
        world = load_world(cfg)
        per = perceive(world, cfg)
        out[name] = (world, per, grasp(world, per, cfg))
    return out


@pytest.mark.parametrize("name", ["sphere", "box", "tallbox"])
def test_plan_postconditions(planned, name):
    world, per, plan = planned[name]
    target = pca_pose(per.surface.points, allow_degenerate=True).pose
    assert np.allclose(plan.target_pose.position, target.position)
    assert plan.trajectory.shape == (10, 7)
    reach = np.linalg.norm(jaw_midpoint(ARM, plan.final_configuration).position - target.position)
    assert reach <= REACH_TOL
    assert grasp_violation(world.arm, plan, per.surface.points, world.scene.table) <= 1e-4
    assert np.all(plan.trajectory >= world.arm.lower) and np.all(plan.trajectory <= world.arm.upper)
    # orientation band on the two constrained angles
    got = jaw_midpoint(world.arm, plan.final_configuration).rpy
    mask = np.ones(3, bool)
    mask[plan.free_angle_index - 1] = False
    assert np.all(np.abs(wrap_angle(got - target.rpy))[mask] <= 0.01 + 1e-4)


@pytest.mark.parametrize("name", ["sphere", "box", "tallbox"])
def test_plan_argmin_over_cost_table(planned, name):
    _, _, plan = planned[name]
    table = {c.free_angle_index: (c.cost, c.feasible) for c in plan.candidates}
    assert sorted(table) == [1, 2, 3]
    feasible = {f: c for f, (c, ok) in table.items() if ok}
    assert plan.free_angle_index == min(feasible, key=feasible.get)
    assert plan.cost == min(feasible.values())


def test_tall_and_flat_boxes_pick_different_free_angles(planned):
    assert planned["box"][2].free_angle_index != planned["tallbox"][2].free_angle_index


def test_plan_json(planned, tmp_path):
    _, _, plan = planned["sphere"]
    plan.save_json(tmp_path / "g.json")
    d = json.loads((tmp_path / "g.json").read_text())
    assert d["free_angle_index"] == plan.free_angle_index and len(d["trajectory"]) == 10
    assert np.allclose(d["trajectory"], plan.trajectory)


def test_grasp_transform_attaches_object(planned):
    _, _, plan = planned["sphere"]
    T = grasp_transform(ARM, plan.final_configuration)
    from reconaware.arm import wrist_transform
    # at the grasp configuration, wrist @ grasp_tf is the identity on world points
    assert np.allclose(wrist_transform(ARM, plan.final_configuration) @ T, np.eye(4), atol=1e-12)


def test_unreachable_object(planned):
    _, per, _ = planned["sphere"]
    far = SurfaceSet(per.surface.points + [10.0, 0, 0], per.surface.mean, per.surface.var, per.surface.spacing)
    with pytest.raises(NoFeasibleGrasp):
        plan_grasp(ARM, per.gpis, far, None, ARM.limit_midpoint(), H=4, opts=SolveOptions(max_outer=3, max_inner=20))


def test_plan_rejects_bad_start(planned):
    _, per, _ = planned["sphere"]
    with pytest.raises(ValueError):
        plan_grasp(ARM, per.gpis, per.surface, None, ARM.upper + 0.1)


def test_clearance_terms_match_sdf(planned):
    from reconaware.sdf import collision_violation, box_violation
    world, per, plan = planned["box"]
    Q = plan.trajectory[:, None, :]
    c = np.maximum(clearance_term(ARM, per.surface.points, 0.01)(Q), 0).max(axis=-1)[:, 0]
    t = np.maximum(table_term(ARM, world.scene.table, 0.01)(Q), 0).max(axis=-1)[:, 0]
    assert np.allclose(c, collision_violation(ARM, plan.trajectory, per.surface.points, 0.01))
    assert np.allclose(t, box_violation(world.scene.table, ARM, plan.trajectory, 0.01))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from cem_problems import fuzz_run, quadratic_run, ray_scene
from reconaware.arm import default_arm, wrist_transform
from reconaware.cem import (CONVERGENCE_REASONS, WORST_COST, CemConfig, GmmPolicy, _ray_hits, beam_radius,
                            elite_select, fit_gmm, raycast_gpis, raycast_indices, sample_constrained,
                            trajectory_cost, transition_waypoints)
from reconaware.errors import SamplingStalled, TooFewElites
from reconaware.geom import Pose6, apply_transform, invert_transform
from reconaware.gpis import GpisHyper, SurfaceSet, conditional_entropy, fit
from reconaware.sdf import CameraModel

ARM = default_arm()


def _grasp_tf_for(q, T_object):
    return invert_transform(wrist_transform(ARM, q)) @ T_object


# ----------------------------------------------------------------- raycasting


@pytest.mark.parametrize("seed", range(5))
def test_ray_hits_match_exhaustive_oracle(seed):
    surface, _, cam, T = ray_scene(seed)
    pts_cam = apply_transform(cam.T_cam_world @ T, surface.points)
    r = beam_radius(surface)
    assert np.array_equal(_ray_hits(pts_cam, cam.beam, r), oracles.nearest_hits(pts_cam, cam.beam, r))


@pytest.mark.parametrize("seed", range(3))
def test_raycast_single_waypoint_matches_oracle(seed):
    surface, gpis, cam, T = ray_scene(seed + 50)
    q = ARM.limit_midpoint() + np.random.default_rng(seed).uniform(-0.5, 0.5, 7)
    gtf = _grasp_tf_for(q, T)
    got = raycast_gpis(surface, gpis, cam, q[None], ARM, gtf)
    hits = oracles.nearest_hits(apply_transform(cam.T_cam_world @ T, surface.points), cam.beam, beam_radius(surface))
    hits = np.unique(hits[hits >= 0])
    expect = surface.points[hits[surface.mean[hits] <= gpis.hyper.eta]]
    assert np.array_equal(got.points, expect)


def _sphere_surface(n=800, radius=0.06, seed=0):
    v = np.random.default_rng(seed).normal(size=(n, 3))
    P = radius * v / np.linalg.norm(v, axis=1, keepdims=True)
    gpis = fit(P[:5], GpisHyper(length_scale=0.04, noise=0.06))
    return SurfaceSet(P, np.zeros(n), np.zeros(n), 0.01), gpis


def _facing_setup():
    """Sphere centered on the wrist origin at q_a and a camera looking at it across the wrist x axis."""
    q_a = ARM.limit_midpoint()
    W = wrist_transform(ARM, q_a)
    center, x_axis = W[:3, 3], W[:3, 0]
    cam = CameraModel.looking_at(center + 0.6 * x_axis, center, up=W[:3, 2], rows=40, cols=40)
    surface, gpis = _sphere_surface()
    T_object = Pose6(center).matrix()
    return q_a, cam, surface, gpis, _grasp_tf_for(q_a, T_object), x_axis


def test_raycast_sees_only_front_hemisphere():
    q_a, cam, surface, gpis, gtf, x_axis = _facing_setup()
    idx = raycast_indices(surface, gpis, cam, q_a[None], ARM, gtf)
    assert len(idx) > 0
    normals = surface.points[idx] / np.linalg.norm(surface.points[idx], axis=1, keepdims=True)
    R = wrist_transform(ARM, q_a)[:3, :3] @ gtf[:3, :3]
    to_cam = x_axis
    cos = (normals @ R.T) @ to_cam
    assert np.all(cos >= np.cos(np.radians(95)))


def test_raycast_flip_sees_both_hemispheres():
    q_a, cam, surface, gpis, gtf, _ = _facing_setup()
    q_b = q_a.copy()
    q_b[6] += np.pi  # last joint rotates the held object half a turn about the wrist axis
    a = raycast_indices(surface, gpis, cam, q_a[None], ARM, gtf)
    b = raycast_indices(surface, gpis, cam, q_b[None], ARM, gtf)
    both = raycast_indices(surface, gpis, cam, np.stack([q_a, q_b]), ARM, gtf)
    assert np.array_equal(both, np.union1d(a, b))
    assert len(both) > max(len(a), len(b))


def test_raycast_object_behind_camera():
    q_a, cam, surface, gpis, _, _ = _facing_setup()
    behind = cam.T_world_cam @ Pose6([0, 0, -0.5]).matrix()
    gtf = _grasp_tf_for(q_a, behind)
    assert len(raycast_gpis(surface, gpis, cam, q_a[None], ARM, gtf)) == 0


def test_raycast_rejects_points_above_threshold():
    q_a, cam, surface, gpis, gtf, _ = _facing_setup()
    outside = SurfaceSet(surface.points, np.full(len(surface), 0.5), surface.var, surface.spacing)
    assert len(raycast_indices(outside, gpis, cam, q_a[None], ARM, gtf)) == 0


# ------------------------------------------------------------------------ cost


def test_cost_empty_is_worst():
    _, gpis = _sphere_surface()
    assert trajectory_cost(gpis, np.zeros((0, 3))) == WORST_COST


def test_cost_prefers_unexplored_points():
    h = GpisHyper(length_scale=0.04, noise=0.06)
    X = np.random.default_rng(0).uniform(-0.05, 0.05, (40, 3))
    gpis = fit(X, h)
    trained = X[:10]
    far = X[:10] + [0.5, 0, 0]
    assert trajectory_cost(gpis, far) < trajectory_cost(gpis, trained)
    assert trajectory_cost(gpis, far) == pytest.approx(-oracles.gp_conditional_entropy(X, far, 1.0, 0.04, 0.06),
                                                       abs=1e-8)


@given(st.integers(0, 10 ** 6))
def test_cost_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    gpis = fit(rng.uniform(-0.1, 0.1, (20, 3)), GpisHyper(length_scale=0.04, noise=0.06))
    S = rng.uniform(-0.1, 0.1, (int(rng.integers(1, 30)), 3))
    assert abs(trajectory_cost(gpis, S) - trajectory_cost(gpis, S[rng.permutation(len(S))])) < 1e-9


@given(st.integers(0, 10 ** 6))
def test_cost_nested_sets_chain_rule(seed):
    # H(A u B) = H(A) + H(B | A); with noise >= 1/(2 pi e) every conditional term is >= 0
    rng = np.random.default_rng(seed)
    X = rng.uniform(-0.1, 0.1, (15, 3))
    h = GpisHyper(length_scale=0.04, noise=0.06)
    gpis = fit(X, h)
    A = rng.uniform(-0.1, 0.1, (int(rng.integers(1, 10)), 3))
    B = rng.uniform(-0.1, 0.1, (int(rng.integers(1, 10)), 3))
    AB = np.vstack([A, B])
    H_A = oracles.gp_conditional_entropy(X, A, 1.0, 0.04, 0.06)
    H_AB = oracles.gp_conditional_entropy(X, AB, 1.0, 0.04, 0.06)
    H_B_given_A = oracles.gp_conditional_entropy(np.vstack([X, A]), B, 1.0, 0.04, 0.06)
    assert abs(H_AB - (H_A + H_B_given_A)) < 1e-8
    assert trajectory_cost(gpis, AB) <= trajectory_cost(gpis, A) + 1e-8
    assert conditional_entropy(gpis, AB) == pytest.approx(H_AB, abs=1e-8)


# ------------------------------------------------------------------------- GMM


def test_gmm_recovers_two_generators():
    rng = np.random.default_rng(0)
    m1, m2 = np.zeros(4), np.full(4, 3.0)
    X = np.vstack([rng.normal(m1, 0.3, (250, 4)), rng.normal(m2, 0.3, (250, 4))])
    g = fit_gmm(list(X), 2, seed=1)
    order = np.argsort(g.means[:, 0])
    assert np.max(np.abs(g.means[order[0]] - m1)) < 0.05 + 0.03
    assert np.max(np.abs(g.means[order[1]] - m2)) < 0.05 + 0.03
    assert np.all(np.abs(g.weights - 0.5) < 0.1)


def test_gmm_single_component_closed_form():
    X = np.random.default_rng(1).normal(size=(60, 5))
    g = fit_gmm(list(X), 1, reg=1e-6)
    assert np.allclose(g.means[0], X.mean(axis=0), atol=1e-12)
    assert np.allclose(g.covariances[0], np.cov(X.T, bias=True) + 1e-6 * np.eye(5), atol=1e-12)
    assert g.weights[0] == pytest.approx(1.0)


def test_gmm_identical_elites():
    X = [np.ones((3, 7))] * 10
    g = fit_gmm(X, 2)
    for S in g.covariances:
        assert np.allclose(S, 1e-6 * np.eye(21), atol=1e-15)
    assert g.cholesky_factors.shape == (2, 21, 21)


def test_gmm_too_few_elites():
    with pytest.raises(TooFewElites):
        fit_gmm([np.zeros(3)], 2)


@settings(max_examples=25)
@given(st.integers(0, 10 ** 6), st.integers(1, 4))
def test_gmm_likelihood_non_decreasing_weights_normalized(seed, k):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(rng.normal(0, 3, 3), rng.uniform(0.1, 1), (int(rng.integers(5, 40)), 3))
                   for _ in range(3)])
    g = fit_gmm(list(X), k, seed=seed)
    assert np.all(np.diff(g.log_likelihood) >= -1e-9)
    assert abs(g.weights.sum() - 1) < 1e-9
    for S in g.covariances:
        assert np.allclose(S, S.T) and np.linalg.eigvalsh(S).min() > 0


def test_gmm_deterministic():
    X = list(np.random.default_rng(2).normal(size=(40, 6)))
    a, b = fit_gmm(X, 2, seed=5), fit_gmm(X, 2, seed=5)
    assert np.array_equal(a.means, b.means) and np.array_equal(a.covariances, b.covariances)


# -------------------------------------------------------------------- sampling


def _two_component(weights=(0.3, 0.7), dim=14):
    means = np.stack([np.zeros(dim), np.full(dim, 5.0)])
    covs = np.stack([np.eye(dim) * 0.01] * 2)
    return GmmPolicy(means, covs, weights)


def test_sampling_component_frequencies_binomial():
    g = _two_component()
    n = 10000
    s = sample_constrained(g, n, seed=0)
    assert len(s) == n
    for k, w in enumerate(g.weights):
        count = np.sum(s.components == k)
        assert abs(count - n * w) <= 3 * np.sqrt(n * w * (1 - w))
    # the components are far apart, so the draw's location tells its component
    loc = np.array([t.mean() > 2.5 for t in s])
    assert np.array_equal(loc, s.components == 1)


def test_sampling_matches_component_moments():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(6, 6))
    S = A @ A.T + 0.1 * np.eye(6)
    g = GmmPolicy(np.arange(6.0)[None], S[None], [1.0])
    X = np.array([np.ravel(t) for t in sample_constrained(g, 20000, seed=1, n_joints=6)])
    assert np.allclose(X.mean(axis=0), np.arange(6.0), atol=0.1)
    assert np.allclose(np.cov(X.T), S, atol=0.15 * np.abs(S).max())


def test_sampling_resets_start_and_shapes():
    g = _two_component()
    start = np.arange(7.0)
    s = sample_constrained(g, 5, seed=0, start=start)
    for t in s:
        assert t.shape == (2, 7) and np.array_equal(t[0], start)


def test_sampling_respects_constraints():
    g = _two_component((0.5, 0.5))
    s = sample_constrained(g, 50, constraints=lambda T: T.mean(axis=(1, 2)) > 2.5, seed=0)
    assert np.all(s.components == 1)


def test_sampling_infeasible_stalls():
    g = _two_component()
    with pytest.raises(SamplingStalled):
        sample_constrained(g, 3, constraints=lambda T: np.zeros(len(T), bool), seed=0, max_attempts=500)


def test_sampling_deterministic():
    g = _two_component()
    a = sample_constrained(g, 30, seed=9)
    b = sample_constrained(g, 30, seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_sampling_object_with_feasible_method():
    class Halfspace:
        def feasible(self, T):
            return T[:, :, 0].min(axis=1) > -0.1

    s = sample_constrained(_two_component((0.5, 0.5)), 20, constraints=Halfspace(), seed=0)
    assert all(t[:, 0].min() > -0.1 for t in s)


# ---------------------------------------------------------------------- loop


def test_elite_threshold_and_topup():
    costs = np.array([5.0, 1.0, 3.0, 2.0, 4.0])
    assert set(elite_select(costs, 3.0, 2)) == {1, 2, 3}
    assert list(elite_select(costs, 0.5, 2)) == [1, 3]  # nothing under gamma: best max(ceil(10%), N_c)
    assert len(elite_select(costs, np.inf, 2)) == 5


def test_first_elite_is_whole_initial_set():
    seen = {}

    def fit(elite, k, seed):
        seen.setdefault("first", len(elite))
        return fit_gmm(elite, k, seed)

    init = [np.full((1, 2), float(i)) for i in range(12)]
    from reconaware.cem import cem_optimize
    cem_optimize(init, lambda xs: [float(np.sum(x ** 2)) for x in xs],
                 lambda g, n, s: sample_constrained(g, n, None, s, n_joints=2), max_iter=1, fit=fit)
    assert seen["first"] == 12


@settings(max_examples=30)
@given(st.integers(0, 10 ** 6))
def test_cem_threshold_and_best_cost_monotone(seed):
    st_ = fuzz_run(seed)
    gammas = [h.gamma for h in st_.history]
    best = [h.best_cost for h in st_.history]
    assert np.all(np.diff(gammas) <= 0) or all(np.isinf(gammas))
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
    assert st_.reason in CONVERGENCE_REASONS
    assert st_.best_cost == min(c for _, c in st_.seen)


def test_cem_reason_elite_threshold():
    st_ = fuzz_run(3)
    from reconaware.cem import cem_optimize
    init = [np.full((1, 1), v) for v in np.linspace(-1, 1, 20)]
    st_ = cem_optimize(init, lambda xs: [float(np.sum(x ** 2)) for x in xs],
                       lambda g, n, s: sample_constrained(g, n, None, s, n_joints=1), delta=10.0, eps=0.0)
    assert st_.reason == "elite_threshold_met" and st_.converged


def test_cem_quadratic_converges():
    hits = sum(quadratic_run(s).best_cost <= 1e-2 for s in range(5))
    assert hits >= 4


def test_transition_waypoints_via_split():
    x0, via, goal = Pose6([0, 0, 0]), Pose6([1, 0, 0], [0, 0, 1.0]), Pose6([1, 1, 0])
    w = transition_waypoints(x0, goal, 15, via)
    assert len(w) == 14
    assert np.allclose(w[6].position, via.position) and np.allclose(w[6].rpy, via.rpy)
    assert np.allclose(w[-1].position, goal.position)


def test_cem_config_validation():
    for kw in ({"n_initial": 1}, {"n_components": 0}, {"length": 2}, {"percentile": 0}, {"max_iter": 0},
               {"eps": -1}):
        with pytest.raises(ValueError):
            CemConfig(**kw)

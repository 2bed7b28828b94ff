import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contact_slam.estimation import (BeliefCollapse, GaussianFactor, Region, SingularSystemError, StateChain,
                                     alignment_check, env_region_update, gripper_factor,
                                     gripper_factor_residual, object_factor, object_factor_residual,
                                     predicted_object_pose, solve_map, write_trace_csv)
from contact_slam.geometry import Pose2
from contact_slam.tactile import homogeneous, pose_matrix

coord = st.floats(-100, 100, allow_nan=False)


def in_hand(dx, dy, dtheta):
    c, s = math.cos(dtheta), math.sin(dtheta)
    return homogeneous(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]]), [dx, dy, 0.0])


# --------------------------------------------------------------------------- residuals

def test_gripper_residual_examples():
    g = Pose2(1, 2, 0.3)
    np.testing.assert_array_equal(gripper_factor_residual(g, g), 0)
    np.testing.assert_allclose(gripper_factor_residual(Pose2(2, 2, 0.3), g), (1, 0, 0))
    r = gripper_factor_residual(Pose2(0, 0, 3.1), Pose2(0, 0, -3.1))
    assert r[2] == pytest.approx(6.2 - 2 * math.pi)
    assert r[2] == pytest.approx(-0.0832, abs=1e-4)


@given(coord, coord, st.floats(-3, 3), coord, coord)
def test_gripper_residual_translation_invariant(x, y, t, dx, dy):
    a, b = Pose2(x, y, t), Pose2(x + 1.5, y - 2.0, t + 0.2)
    r1 = gripper_factor_residual(a, b)
    r2 = gripper_factor_residual(Pose2(x + dx, y + dy, t), Pose2(x + 1.5 + dx, y - 2.0 + dy, t + 0.2))
    np.testing.assert_allclose(np.linalg.norm(r1), np.linalg.norm(r2), atol=1e-9)


def test_object_residual_examples():
    g = Pose2(3, 4, 0.5)
    T = in_hand(2, -1, 0.1)
    l = predicted_object_pose(g, T)
    np.testing.assert_allclose(object_factor_residual(l, g, T), 0, atol=1e-12)
    np.testing.assert_allclose(object_factor_residual(g, g, np.eye(4)), 0, atol=1e-12)


@given(coord, coord, st.floats(-3, 3), st.floats(-5, 5), st.floats(-5, 5), st.floats(-0.5, 0.5),
       coord, coord, st.floats(-3, 3))
def test_object_residual_matches_hand_composition(gx, gy, gt, dx, dy, dt, lx, ly, lt):
    g, l = Pose2(gx, gy, gt), Pose2(lx, ly, lt)
    T = pose_matrix(g) @ in_hand(dx, dy, dt)
    want = np.array([lx - T[0, 3], ly - T[1, 3], math.remainder(lt - math.atan2(T[1, 0], T[0, 0]), 2 * math.pi)])
    got = object_factor_residual(l, g, in_hand(dx, dy, dt))
    np.testing.assert_allclose(got[:2], want[:2], atol=1e-9)
    assert math.isclose(math.cos(got[2]), math.cos(want[2]), abs_tol=1e-9)
    assert math.isclose(math.sin(got[2]), math.sin(want[2]), abs_tol=1e-9)


def test_factor_requires_positive_covariance():
    with pytest.raises(ValueError, match="positive definite"):
        GaussianFactor("gripper", (("g", 0),), lambda g: np.zeros(3), [0.1, 0.0, 0.1])


# --------------------------------------------------------------------------- solver

def test_single_prior_is_exact():
    prior = Pose2(5, -3, 0.4)
    sol = solve_map(StateChain([Pose2()], []), [gripper_factor(0, prior)])
    np.testing.assert_allclose(sol.gripper_poses[0].as_list(), prior.as_list(), atol=1e-9)


def test_conflicting_equal_priors_give_midpoint():
    sol = solve_map(StateChain([Pose2()], []), [gripper_factor(0, Pose2(0, 0, 0)), gripper_factor(0, Pose2(4, 2, 0.2))])
    np.testing.assert_allclose(sol.gripper_poses[0].as_list(), (2, 1, 0.1), atol=1e-9)


def test_linear_factors_match_weighted_least_squares():
    a, b = Pose2(1, 2, 0.1), Pose2(3, -1, 0.3)
    sa, sb = np.array([0.1, 0.2, 0.01]), np.array([0.3, 0.1, 0.02])
    sol = solve_map(StateChain([Pose2()], []), [gripper_factor(0, a, sa), gripper_factor(0, b, sb)])
    wa, wb = 1 / sa**2, 1 / sb**2
    want = (wa * np.array(a.as_list()) + wb * np.array(b.as_list())) / (wa + wb)
    np.testing.assert_allclose(sol.gripper_poses[0].as_list(), want, atol=1e-9)


def _grid_minimize(cost, center, half, levels=22, n=11):
    """Successively refined exhaustive grid search."""
    c = np.asarray(center, dtype=float)
    h = np.asarray(half, dtype=float)
    for _ in range(levels):
        axes = [np.linspace(c[k] - h[k], c[k] + h[k], n) for k in range(3)]
        X, Y, T = np.meshgrid(*axes, indexing="ij")
        vals = np.vectorize(lambda x, y, t: cost(np.array([x, y, t])))(X, Y, T)
        i = np.unravel_index(np.argmin(vals), vals.shape)
        c = np.array([X[i], Y[i], T[i]])
        h = h * 0.5
    return c


def test_solve_map_matches_grid_minimizer():
    # one gripper pose, a noisy pose prior and an object observation through a rotated in-hand transform
    rng = np.random.default_rng(8)
    for _ in range(3):
        prior = Pose2(*rng.normal(0, 3, 2), rng.normal(0, 0.05))
        T = in_hand(*rng.uniform(-20, 20, 2), rng.uniform(-0.3, 0.3))
        seen = Pose2(*rng.normal(0, 3, 2), rng.normal(0, 0.05))
        sg, so = np.array([0.5, 0.5, 0.02]), np.array([0.4, 0.6, 0.03])
        factors = [gripper_factor(0, prior, sg),
                   GaussianFactor("object", (("g", 0),), lambda g: object_factor_residual(seen, g, T), so)]
        sol = solve_map(StateChain([prior], []), factors).gripper_poses[0]

        def cost(x):
            g = Pose2(*x)
            return sum(float(np.sum((f.residual(g) / f.sigma) ** 2)) for f in factors)

        best = _grid_minimize(cost, prior.as_list(), (10, 10, 0.5))
        np.testing.assert_allclose([sol.x, sol.y], best[:2], atol=1e-3)
        assert abs(sol.theta - best[2]) < 1e-4


def test_solver_cost_non_increasing_and_trace_csv(tmp_path):
    g0 = Pose2(10, -10, 1.0)
    T = in_hand(15, 5, 0.2)
    factors = [gripper_factor(0, Pose2(0, 0, 0)), object_factor(0, T),
               GaussianFactor("object", (("l", 0),), lambda l: object_factor_residual(l, Pose2(1, 1, 0.1), np.eye(4)),
                              [0.3, 0.3, 0.003])]
    trace = []
    solve_map(StateChain([g0], [g0]), factors, trace=trace)
    costs = [c for _, c, _ in trace]
    assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))
    write_trace_csv(tmp_path / "t.csv", trace)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,cost,step_norm" and len(lines) == len(trace) + 1


def test_unconstrained_state_named():
    chain = StateChain([Pose2(), Pose2()], [])
    with pytest.raises(SingularSystemError, match="g1"):
        solve_map(chain, [gripper_factor(0, Pose2())])


def test_rank_deficient_factor_named():
    # a factor that only constrains x leaves y and theta free
    f = GaussianFactor("gripper", (("g", 0),), lambda g: np.array([g.x - 1.0]), [0.1])
    with pytest.raises(SingularSystemError, match="g0"):
        solve_map(StateChain([Pose2()], []), [f])


def test_object_chain_solution_consistent():
    g_prior = Pose2(5, 5, 0.0)
    T = in_hand(0, -20, 0.0)
    sol = solve_map(StateChain([g_prior], [g_prior]), [gripper_factor(0, g_prior), object_factor(0, T)])
    np.testing.assert_allclose(sol.object_poses[0].as_list(), (5, -15, 0), atol=1e-9)


# --------------------------------------------------------------------------- environment region

def _square_cloud(c, h, n=400, seed=0):
    return np.random.default_rng(seed).uniform(np.asarray(c) - h, np.asarray(c) + h, (n, 2))


def test_env_region_idempotent_when_support_unchanged():
    pts = _square_cloud((0, 0), 10)
    l = Pose2(0, 0, 0)
    e0 = env_region_update(None, l, pts)
    e1 = env_region_update(e0, l, pts)
    assert e1.area == pytest.approx(e0.area)
    assert len(e1.points) == len(e0.points)


def test_env_region_shrinks_with_support():
    l = Pose2(3, 4, 0)
    pts = _square_cloud((0, 0), 10)
    e0 = env_region_update(None, l, pts)
    e1 = env_region_update(e0, l, pts[pts[:, 0] < 0])
    assert e1.area <= e0.area
    np.testing.assert_array_equal(e1.contains(l.xy - pts[pts[:, 0] < 0]), True)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 1.0))
def test_env_region_monotone(seed, frac):
    rng = np.random.default_rng(seed)
    pts = rng.normal(0, 10, (200, 2))
    l = Pose2(*rng.normal(0, 5, 2))
    e = env_region_update(None, l, pts)
    keep = rng.uniform(size=200) < frac
    if not keep.any():
        return
    e2 = env_region_update(e, l, pts[keep])
    assert e2.area <= e.area + 1e-9


def test_env_region_collapse():
    l = Pose2()
    e0 = env_region_update(None, l, _square_cloud((0, 0), 5))
    with pytest.raises(BeliefCollapse):
        env_region_update(e0, l, _square_cloud((100, 100), 1))
    with pytest.raises(BeliefCollapse):
        env_region_update(e0, l, np.empty((0, 2)))


def test_region_contains_hull_points():
    r = Region([[0, 0], [10, 0], [10, 10], [0, 10]])
    assert r.area == pytest.approx(100)
    np.testing.assert_array_equal(r.contains([[5, 5], [11, 5], [10, 10]]), [True, False, True])


# --------------------------------------------------------------------------- alignment

def test_alignment_examples():
    assert alignment_check((0, 0, 1), 0.0)
    assert not alignment_check((5, 0, 0), 0.0)
    assert not alignment_check((0.3, 0, 0), 0.0)
    assert not alignment_check((0, 0, 0), 1.0)
    assert alignment_check((0.29, -0.29, 3), 0.99)

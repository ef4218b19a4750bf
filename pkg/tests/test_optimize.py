import math

import numpy as np
import pytest

from cadstretch.camera import CameraPose, project_points, rotation_angle_between
from cadstretch.lbfgs import minimize_lbfgs
from cadstretch.mesh import bounding_box, sample_surface
from cadstretch.optimize import (JointProblem, estimate_pose_and_shape, joint_objective, solve_joint,
                                 solve_joint_arrays)
from cadstretch.pnp import matches_from_arrays, reprojection_rms_arrays
from cadstretch.robust import TooFewMatchesError
from cadstretch.stretch import StretchSpec, axis_planes, stretch_points


def instance(rng, k, n=8, frac=(0.2, -0.1, 0.15)):
    xyz = rng.uniform(-0.5, 0.5, (n, 3))
    planes = tuple(axis_planes_for_box())
    tau = np.array(frac)
    pose = CameraPose(rng.uniform(-0.5, 0.5, 3), [0.1, -0.1, 4.0])
    uv, _ = project_points(stretch_points(xyz, StretchSpec(planes, tau)), pose, k)
    return xyz, uv, planes, tau, pose


def axis_planes_for_box():
    from cadstretch.mesh import box_mesh
    return axis_planes(box_mesh((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5)))


def test_gradient_matches_finite_differences(rng, k):
    for _ in range(20):
        xyz, uv, planes, _, pose = instance(rng, k)
        p = np.concatenate([pose.theta, pose.t, rng.uniform(-0.2, 0.2, 3)]) + rng.normal(0, 0.05, 9)
        prob = JointProblem(uv, xyz, planes, k)
        _, g = prob(p)
        fd = np.empty(9)
        for i in range(9):
            e = np.zeros(9)
            e[i] = 1e-6
            fd[i] = (prob(p + e)[0] - prob(p - e)[0]) / 2e-6
        assert np.abs(fd - g).max() <= 1e-5 * max(1.0, np.abs(g).max())


def test_zero_stretch_reduces_to_reprojection(rng, k):
    xyz, uv, planes, _, pose = instance(rng, k)
    f, _ = joint_objective(np.concatenate([pose.theta, pose.t + 0.05, np.zeros(3)]),
                           matches_from_arrays(uv, xyz), planes, k)
    rms = reprojection_rms_arrays(uv, xyz, pose.rotation, pose.t + 0.05, k)
    assert f == pytest.approx(len(xyz) * rms ** 2, rel=1e-10)


def test_permutation_invariance(rng, k):
    xyz, uv, planes, _, pose = instance(rng, k)
    p = np.concatenate([pose.theta, pose.t, [0.1, 0.0, -0.05]])
    perm = rng.permutation(len(xyz))
    f1, g1 = JointProblem(uv, xyz, planes, k)(p)
    f2, g2 = JointProblem(uv[perm], xyz[perm], planes, k)(p)
    assert f1 == pytest.approx(f2, rel=1e-12) and np.allclose(g1, g2, rtol=1e-10, atol=1e-9)


def test_joint_recovers_stretch(rng, k):
    xyz, uv, planes, tau, pose = instance(rng, k, n=10)
    init = CameraPose(pose.theta + 0.05, pose.t * 1.05)
    sol = solve_joint(matches_from_arrays(uv, xyz), init, planes, k)
    assert rotation_angle_between(sol.pose.rotation, pose.rotation) < 1e-4
    assert np.abs(sol.tau - tau).max() < 1e-3


def test_needs_six_matches(rng, k):
    xyz, uv, planes, _, pose = instance(rng, k, n=5)
    with pytest.raises(TooFewMatchesError):
        solve_joint(matches_from_arrays(uv, xyz), pose, planes, k)


def test_six_matches_one_candidate(rng, k):
    xyz, uv, planes, _, pose = instance(rng, k, n=6)
    hs = estimate_pose_and_shape(matches_from_arrays(uv, xyz), k, xyz, uv, pose, planes)
    assert len(hs.candidates) == 1 and hs.selected == 0


def test_lbfgs_rosenbrock_monotone():
    def rosen(x):
        f = (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
        g = np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])
        return f, g
    res = minimize_lbfgs(rosen, [-1.2, 1.0], max_iter=500)
    assert res.converged and np.allclose(res.x, [1, 1], atol=1e-6)
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


def test_tau_cap_is_respected(rng, k):
    xyz, uv, planes, tau, pose = instance(rng, k, n=10, frac=(0.4, 0.4, 0.4))
    sol = solve_joint_arrays(uv, xyz, pose, planes, k, tau_cap=0.1)
    assert np.all(np.abs(sol.tau) <= 0.1 + 1e-12)

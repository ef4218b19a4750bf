"""Joint pose and stretch estimation from keypoint matches.

The decision vector is ``(theta[3], T[3], tau[P])``. Model points are stretched,
rotated by ``R(theta) @ R0`` and translated, then projected; the objective is
the weighted sum of squared pixel residuals. ``R0`` defaults to identity, so
``theta`` are plain Z-Y-X Euler angles; the solver anchors ``R0`` at the
initial rotation and optimises the Euler increment, which keeps the
parametrisation away from gimbal lock.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .camera import EPS_DEPTH, CameraPose, Intrinsics, euler_rotation_and_derivatives, rotation_to_euler
from .lbfgs import minimize_lbfgs
from .mesh import SurfaceSample
from .pnp import solve_pnp_arrays, stack_matches, translation_for_rotation
from .robust import (AllCandidatesDegenerateError, Candidate, HypothesisSet, TooFewMatchesError,
                     _as_index, _check_selection, _rms_all, _select, enumerate_subsets, score_candidate)
from .stretch import StretchPlane, StretchSpec, side_signs

BEHIND_OFFSET = 1e12  # (1e6 px)^2, matches the reprojection sentinel
BEHIND_WEIGHT = 1e6


@dataclass(frozen=True)
class JointSolution:
    pose: CameraPose
    tau: np.ndarray
    objective: float
    iterations: int
    converged: bool
    message: str = ""

    def stretch_spec(self, planes) -> StretchSpec:
        return StretchSpec(tuple(planes), self.tau)

    def to_dict(self) -> dict:
        return {"pose": self.pose.to_dict(), "tau": np.asarray(self.tau).tolist(),
                "objective": self.objective, "iterations": self.iterations,
                "converged": self.converged}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class JointConfig:
    memory: int = 10
    gtol: float = 1e-8
    ftol: float = 1e-12
    max_iter: int = 500
    c1: float = 1e-4
    c2: float = 0.9


class JointProblem:
    """Precomputed data for repeated objective evaluations on one match set."""

    def __init__(self, uv, xyz, planes, k: Intrinsics, weights=None, base_rotation=None):
        self.uv = np.asarray(uv, float)
        self.xyz = np.asarray(xyz, float)
        self.planes = tuple(planes)
        self.k = k
        self.w = np.ones(len(self.xyz)) if weights is None else np.asarray(weights, float)
        self.r0 = np.eye(3) if base_rotation is None else np.asarray(base_rotation, float)
        if self.planes:
            self.normals = np.array([p.n for p in self.planes])
            self.signs = side_signs(self.xyz, self.normals, np.array([p.d for p in self.planes]))
            # d x_stretch / d tau_i, shape (N, P, 3)
            self.dx_dtau = 0.5 * self.signs[:, :, None] * self.normals[None, :, :]
        else:
            self.normals = np.zeros((0, 3))
            self.signs = np.zeros((len(self.xyz), 0))
            self.dx_dtau = np.zeros((len(self.xyz), 0, 3))

    @property
    def n_params(self) -> int:
        return 6 + len(self.planes)

    def __call__(self, params) -> tuple[float, np.ndarray]:
        params = np.asarray(params, float)
        theta, t, tau = params[:3], params[3:6], params[6:]
        r, dr = euler_rotation_and_derivatives(theta)
        r_full = r @ self.r0
        dr_full = dr @ self.r0
        xs = self.xyz + (self.signs * (0.5 * tau)) @ self.normals if len(tau) else self.xyz
        xc = xs @ r_full.T + t
        z = xc[:, 2]
        front = z > EPS_DEPTH
        k = self.k
        # dF/dXc per point
        dxc = np.zeros_like(xc)
        f = 0.0
        if np.any(front):
            zf = z[front]
            iz = 1.0 / zf
            ru = k.fx * xc[front, 0] * iz + k.cx - self.uv[front, 0]
            rv = k.fy * xc[front, 1] * iz + k.cy - self.uv[front, 1]
            w = self.w[front]
            f += float(np.sum(w * (ru * ru + rv * rv)))
            dxc[front, 0] = 2 * w * ru * k.fx * iz
            dxc[front, 1] = 2 * w * rv * k.fy * iz
            dxc[front, 2] = -2 * w * (ru * k.fx * xc[front, 0] + rv * k.fy * xc[front, 1]) * iz * iz
        if not np.all(front):
            back = ~front
            gap = EPS_DEPTH - z[back]
            w = self.w[back]
            f += float(np.sum(w * (BEHIND_OFFSET + BEHIND_WEIGHT * gap * gap)))
            dxc[back, 2] = -2 * w * BEHIND_WEIGHT * gap
        grad = np.empty(self.n_params)
        # dXc/dtheta_k = dR_k @ xs
        grad[:3] = np.einsum("nc,kcd,nd->k", dxc, dr_full, xs)
        grad[3:6] = dxc.sum(axis=0)
        if len(tau):
            grad[6:] = np.einsum("nc,cd,npd->p", dxc, r_full, self.dx_dtau)
        return f, grad


def joint_objective(params, matches, planes, k: Intrinsics, base_rotation=None) -> tuple[float, np.ndarray]:
    """Sum of squared reprojection residuals and its analytic gradient.

    Side signs of the stretch planes are frozen at the unstretched model
    points, so matches on a plane contribute no stretch gradient. Points
    behind the camera add ``1e12 + 1e6 * (eps - Zc)^2``.
    """
    uv, xyz, w = stack_matches(matches)
    if len(uv) == 0:
        raise ValueError("need at least one match")
    planes = tuple(planes)
    if len(np.asarray(params)) != 6 + len(planes):
        raise ValueError("params must hold theta, T and one tau per plane")
    return JointProblem(uv, xyz, planes, k, w, base_rotation)(params)


def solve_joint_arrays(uv, xyz, init_pose: CameraPose, planes, k: Intrinsics, tau_cap=None,
                       cfg: JointConfig | None = None, weights=None) -> JointSolution:
    cfg = cfg or JointConfig()
    planes = tuple(planes)
    r0 = init_pose.rotation
    prob = JointProblem(uv, xyz, planes, k, weights, base_rotation=r0)
    # variable scaling: radians, camera distance, object size
    dist = max(float(np.linalg.norm(init_pose.t)), 1e-3)
    size = float(np.max(np.ptp(np.asarray(xyz, float), axis=0))) if len(xyz) > 1 else 1.0
    scale = np.concatenate([np.ones(3), np.full(3, dist), np.full(len(planes), max(size, 1e-3))])
    cap = None if tau_cap is None else np.broadcast_to(np.asarray(tau_cap, float), (len(planes),))

    def fun(z):
        f, g = prob(z * scale)
        return f, g * scale

    def project(z):
        if cap is None:
            return z
        zc = z.copy()
        zc[6:] = np.clip(zc[6:], -cap / scale[6:], cap / scale[6:])
        return zc

    x0 = np.concatenate([np.zeros(3), init_pose.t, np.zeros(len(planes))]) / scale
    res = minimize_lbfgs(fun, x0, cfg.memory, cfg.gtol, cfg.ftol, cfg.max_iter, cfg.c1, cfg.c2,
                         project if cap is not None else None)
    p = res.x * scale
    r, _ = euler_rotation_and_derivatives(p[:3])
    pose = CameraPose(rotation_to_euler(r @ r0), p[3:6])
    return JointSolution(pose, p[6:].copy(), float(res.f), res.iterations, res.converged, res.message)


def solve_joint(matches, init_pose: CameraPose, planes, k: Intrinsics, tau_cap=None,
                cfg: JointConfig | None = None) -> JointSolution:
    """L-BFGS over pose and stretch, started at ``init_pose`` with zero stretch.

    ``tau_cap`` bounds ``|tau_i|`` by projection after each line search.
    A failed line search returns the best point so far with ``converged=False``.
    """
    uv, xyz, w = stack_matches(matches)
    if len(uv) < 6:
        raise TooFewMatchesError(f"joint estimation needs at least 6 matches, got {len(uv)}")
    return solve_joint_arrays(uv, xyz, init_pose, planes, k, tau_cap, cfg,
                              None if np.all(w == 1) else w)


def _initial_pose(init: str, uv, xyz, init_pose: CameraPose | None, k: Intrinsics):
    if init == "pnp":
        sol = solve_pnp_arrays(uv, xyz, k)
        if sol is not None:
            return sol.pose
    if init_pose is None:
        return None
    # keep the retrieved view's rotation; fit the translation to this subset
    r = init_pose.rotation
    t = translation_for_rotation(uv, xyz, r, k)
    if np.any((xyz @ r.T + t)[:, 2] <= EPS_DEPTH):
        t = init_pose.t
    return CameraPose(init_pose.theta, t)


def estimate_pose_and_shape(matches, k: Intrinsics, mesh_samples: SurfaceSample | np.ndarray,
                            mask_points, init_pose: CameraPose | None, planes,
                            subset_size: int = 6, q: float = 0.2, cap: int = 2000, seed: int = 0,
                            tau_cap=None, init: str = "view", per_direction: bool = False,
                            cfg: JointConfig | None = None, selection: str = "silhouette") -> HypothesisSet:
    """Joint pose+stretch candidates per match subset, ranked by silhouette score.

    ``init='view'`` starts every subset from the rotation of ``init_pose`` with a
    least-squares translation for that subset; ``init='pnp'`` re-initialises
    each subset with its own PnP solution.
    """
    _check_selection(selection)
    if subset_size < 6:
        raise ValueError("joint estimation needs subsets of at least 6 matches")
    if init not in ("view", "pnp"):
        raise ValueError(f"unknown init mode {init!r}")
    uv, xyz, _ = stack_matches(matches)
    if len(uv) < subset_size:
        raise TooFewMatchesError(f"need {subset_size} matches, got {len(uv)}")
    planes = tuple(planes)
    model_pts = mesh_samples.points if isinstance(mesh_samples, SurfaceSample) else np.asarray(mesh_samples)
    mask_index = _as_index(mask_points) if selection == "silhouette" else None
    hs = HypothesisSet()
    for subset in enumerate_subsets(len(uv), subset_size, cap, seed):
        idx = list(subset)
        pose0 = _initial_pose(init, uv[idx], xyz[idx], init_pose, k)
        if pose0 is None:
            hs.n_degenerate += 1
            continue
        sol = solve_joint_arrays(uv[idx], xyz[idx], pose0, planes, k, tau_cap, cfg)
        score = None
        if mask_index is not None:
            spec = StretchSpec(planes, sol.tau)
            score = score_candidate(model_pts, sol.pose, k, mask_index, q, per_direction, spec)
        cand = Candidate(subset, sol, score)
        cand.rms_all = _rms_all(cand, uv, xyz, k, planes)
        hs.candidates.append(cand)
    if not hs.candidates:
        raise AllCandidatesDegenerateError("every match subset was degenerate")
    _select(hs, selection)
    return hs

"""Known-intrinsics PnP: linear initialisation followed by Levenberg-Marquardt.

Non-planar point sets use an EPnP-style control-point formulation, coplanar
sets a homography decomposition that yields two candidate roots, and exactly
three points the classical P3P quartic. Every candidate is refined by LM over
a local Euler-angle increment and the translation.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import EPS_DEPTH, CameraPose, Intrinsics, euler_to_rotation

BEHIND_SENTINEL_PX = 1e6
COLLINEAR_TOL = 1e-9
PLANAR_TOL = 1e-6


@dataclass(frozen=True)
class Match:
    u: np.ndarray
    x: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, float).reshape(2))
        object.__setattr__(self, "x", np.asarray(self.x, float).reshape(3))
        if not np.all(np.isfinite(self.x)):
            raise ValueError("match 3D point must be finite")


@dataclass(frozen=True)
class PnpSolution:
    pose: CameraPose
    rms_reprojection: float
    converged: bool
    rms_initial: float = float("nan")

    def to_dict(self) -> dict:
        return {"pose": self.pose.to_dict(), "rms_reprojection": self.rms_reprojection,
                "converged": self.converged}


def stack_matches(matches) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    matches = list(matches)
    if not matches:
        return np.zeros((0, 2)), np.zeros((0, 3)), np.zeros(0)
    uv = np.array([m.u for m in matches])
    xyz = np.array([m.x for m in matches])
    w = np.array([m.weight for m in matches], float)
    return uv, xyz, w


def matches_from_arrays(uv, xyz, weights=None) -> list[Match]:
    if weights is None:
        weights = np.ones(len(uv))
    return [Match(u, x, float(w)) for u, x, w in zip(uv, xyz, weights)]


def matches_in_bounds(matches, k: Intrinsics, margin: float = 0.2) -> bool:
    uv, _, _ = stack_matches(matches)
    mx, my = margin * k.width, margin * k.height
    return bool(np.all((uv[:, 0] >= -mx) & (uv[:, 0] <= k.width + mx)
                       & (uv[:, 1] >= -my) & (uv[:, 1] <= k.height + my)))


def read_matches_csv(path: str | Path) -> list[Match]:
    """Read ``u_px, v_px, x, y, z`` rows; a non-numeric header line is skipped."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                vals = [float(c) for c in row[:5]]
            except ValueError:
                if not out:
                    continue
                raise
            out.append(Match(vals[:2], vals[2:5]))
    return out


def write_matches_csv(matches, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["u_px", "v_px", "x", "y", "z"])
        for m in matches:
            w.writerow([*m.u.tolist(), *m.x.tolist()])


def reprojection_rms_arrays(uv, xyz, r, t, k: Intrinsics) -> float:
    xc = np.asarray(xyz, float) @ r.T + t
    z = xc[:, 2]
    valid = z > EPS_DEPTH
    err2 = np.full(len(z), BEHIND_SENTINEL_PX ** 2)
    if np.any(valid):
        zv = z[valid]
        pu = k.fx * xc[valid, 0] / zv + k.cx
        pv = k.fy * xc[valid, 1] / zv + k.cy
        err2[valid] = (pu - uv[valid, 0]) ** 2 + (pv - uv[valid, 1]) ** 2
    return float(np.sqrt(np.mean(err2)))


def reprojection_rms(matches, pose: CameraPose, k: Intrinsics) -> float:
    """RMS pixel distance between observed and projected matches.

    Points behind the camera contribute a 1e6 px error.
    """
    uv, xyz, _ = stack_matches(matches)
    return reprojection_rms_arrays(uv, xyz, pose.rotation, pose.t, k)


# --- geometry helpers -------------------------------------------------------

def kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid transform with ``dst ~ R @ src + t``."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    r = vt.T @ u.T
    if np.linalg.det(r) < 0:
        vt[2] = -vt[2]
        r = vt.T @ u.T
    return r, cd - r @ cs


def _principal_frame(xyz: np.ndarray):
    c = xyz.mean(axis=0)
    _, _, vt = np.linalg.svd(xyz - c, full_matrices=False)
    if len(vt) < 3:
        vt = np.vstack([vt, np.cross(vt[0], vt[1]) if len(vt) == 2 else np.eye(3)[:3 - len(vt)]])
    extents = np.ptp((xyz - c) @ vt.T, axis=0)
    return c, vt, extents


def point_configuration(xyz: np.ndarray) -> str:
    """Classify a 3D point set as ``'collinear'``, ``'planar'`` or ``'general'``."""
    _, _, ext = _principal_frame(np.asarray(xyz, float))
    if ext[0] <= 0 or ext[1] <= COLLINEAR_TOL * ext[0]:
        return "collinear"
    if ext[2] < PLANAR_TOL * ext[0]:
        return "planar"
    return "general"


# --- EPnP -------------------------------------------------------------------

_PAIRS = list(itertools.combinations(range(4), 2))


def _epnp_L(v: np.ndarray) -> np.ndarray:
    """6x10 matrix relating squared control-point distances to beta products."""
    vs = v.reshape(4, 4, 3)  # [eigvec k, control point, xyz]
    rows = []
    for a, b in _PAIRS:
        d = vs[:, a] - vs[:, b]
        dd = d @ d.T
        rows.append([dd[0, 0], 2 * dd[0, 1], dd[1, 1], 2 * dd[0, 2], 2 * dd[1, 2], dd[2, 2],
                     2 * dd[0, 3], 2 * dd[1, 3], 2 * dd[2, 3], dd[3, 3]])
    return np.array(rows)


def _beta_products(b):
    b0, b1, b2, b3 = b
    return np.array([b0 * b0, b0 * b1, b1 * b1, b0 * b2, b1 * b2, b2 * b2,
                     b0 * b3, b1 * b3, b2 * b3, b3 * b3])


def _beta_gauss_newton(L, rho, b, iters=5):
    b = np.array(b, float)
    for _ in range(iters):
        b0, b1, b2, b3 = b
        r = L @ _beta_products(b) - rho
        J = np.stack([
            2 * L[:, 0] * b0 + L[:, 1] * b1 + L[:, 3] * b2 + L[:, 6] * b3,
            L[:, 1] * b0 + 2 * L[:, 2] * b1 + L[:, 4] * b2 + L[:, 7] * b3,
            L[:, 3] * b0 + L[:, 4] * b1 + 2 * L[:, 5] * b2 + L[:, 8] * b3,
            L[:, 6] * b0 + L[:, 7] * b1 + L[:, 8] * b2 + 2 * L[:, 9] * b3,
        ], axis=1)
        jtj = J.T @ J
        try:
            step = np.linalg.solve(jtj + 1e-12 * np.trace(jtj) * np.eye(4), -J.T @ r)
        except np.linalg.LinAlgError:
            break
        b = b + step
        if np.linalg.norm(step) < 1e-14 * max(1.0, np.linalg.norm(b)):
            break
    return b


def _epnp_initial_betas(L, rho):
    out = []
    # N=4 approximation: B11, B12, B13, B14
    x4, *_ = np.linalg.lstsq(L[:, [0, 1, 3, 6]], rho, rcond=None)
    if x4[0] < 0:
        b0 = np.sqrt(-x4[0])
        out.append([b0, -x4[1] / b0, -x4[2] / b0, -x4[3] / b0])
    elif x4[0] > 0:
        b0 = np.sqrt(x4[0])
        out.append([b0, x4[1] / b0, x4[2] / b0, x4[3] / b0])
    # N=2: B11, B12, B22
    x3, *_ = np.linalg.lstsq(L[:, [0, 1, 2]], rho, rcond=None)
    b0 = np.sqrt(abs(x3[0]))
    b1 = np.sqrt(abs(x3[2])) if x3[2] * x3[0] > 0 else 0.0
    if x3[1] < 0:
        b0 = -b0
    out.append([b0, b1, 0.0, 0.0])
    # N=3: B11, B12, B22, B13, B23
    x5, *_ = np.linalg.lstsq(L[:, [0, 1, 2, 3, 4]], rho, rcond=None)
    b0 = np.sqrt(abs(x5[0]))
    b1 = np.sqrt(abs(x5[2])) if x5[2] * x5[0] > 0 else 0.0
    if x5[1] < 0:
        b0 = -b0
    b2 = x5[3] / b0 if b0 != 0 else 0.0
    out.append([b0, b1, b2, 0.0])
    return out


def _epnp(xn: np.ndarray, xyz: np.ndarray):
    """Candidate (R, t) pairs from the EPnP linear stage, or [] when rank-deficient."""
    c0, vt, _ = _principal_frame(xyz)
    n = len(xyz)
    centered = xyz - c0
    sv = np.sqrt(np.sum((centered @ vt.T) ** 2, axis=0) / n)
    if np.any(sv <= 0):
        return []
    cw = np.vstack([c0, c0 + sv[:, None] * vt])  # 4 control points
    A = (cw[1:] - c0).T
    alpha_rest = np.linalg.solve(A, centered.T).T
    alphas = np.column_stack([1.0 - alpha_rest.sum(axis=1), alpha_rest])

    M = np.zeros((2 * n, 12))
    for j in range(4):
        M[0::2, 3 * j] = alphas[:, j]
        M[0::2, 3 * j + 2] = -alphas[:, j] * xn[:, 0]
        M[1::2, 3 * j + 1] = alphas[:, j]
        M[1::2, 3 * j + 2] = -alphas[:, j] * xn[:, 1]
    evals, evecs = np.linalg.eigh(M.T @ M)
    if evals[4] <= 1e-12 * max(evals[-1], 1e-300):
        return []  # more than four null directions
    v = evecs[:, :4].T.copy()
    L = _epnp_L(v)
    rho = np.array([np.sum((cw[a] - cw[b]) ** 2) for a, b in _PAIRS])

    sols = []
    for b in _epnp_initial_betas(L, rho):
        b = _beta_gauss_newton(L, rho, b)
        cc = (b @ v).reshape(4, 3)
        pc = alphas @ cc
        if np.mean(pc[:, 2]) < 0:
            pc = -pc
        if not np.all(np.isfinite(pc)):
            continue
        sols.append(kabsch(xyz, pc))
    return sols


# --- planar -----------------------------------------------------------------

def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    def norm_tf(p):
        c = p.mean(axis=0)
        s = np.sqrt(2) / max(np.mean(np.linalg.norm(p - c, axis=1)), 1e-300)
        return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])

    ts, td = norm_tf(src), norm_tf(dst)
    ps = (np.column_stack([src, np.ones(len(src))]) @ ts.T)[:, :2]
    pd = (np.column_stack([dst, np.ones(len(dst))]) @ td.T)[:, :2]
    A = []
    for (x, y), (u, v) in zip(ps, pd):
        A.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        A.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    _, s, vt = np.linalg.svd(np.array(A))
    h = vt[-1].reshape(3, 3)
    return np.linalg.inv(td) @ h @ ts


def _nearest_rotation(m):
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1, 1, -1]) @ vt
    return r


def _planar(xn: np.ndarray, xyz: np.ndarray):
    """Two candidate poses for a coplanar point set (direct root and its flip)."""
    c, vt, _ = _principal_frame(xyz)
    basis = np.vstack([vt[0], vt[1], np.cross(vt[0], vt[1])])
    p2 = (xyz - c) @ basis[:2].T
    h = _homography(p2, xn)
    lam = 2.0 / (np.linalg.norm(h[:, 0]) + np.linalg.norm(h[:, 1]))
    h = h * lam
    depths = np.column_stack([p2, np.ones(len(p2))]) @ h[2]
    if np.mean(depths) < 0:
        h = -h
    rp = _nearest_rotation(np.column_stack([h[:, 0], h[:, 1], np.cross(h[:, 0], h[:, 1])]))
    tp = h[:, 2]
    r = rp @ basis
    t = tp - r @ c
    sols = [(r, t)]
    # second root: reflect the plane normal about the line of sight to the centroid
    ray = tp / np.linalg.norm(tp)
    nrm = rp[:, 2]
    n2 = 2 * (nrm @ ray) * ray - nrm
    axis = np.cross(nrm, n2)
    sa = np.linalg.norm(axis)
    if sa > 1e-12:
        ang = np.arctan2(sa, nrm @ n2)
        kx = _skew(axis / sa)
        rot = np.eye(3) + np.sin(ang) * kx + (1 - np.cos(ang)) * kx @ kx
        r2 = rot @ r
        sols.append((r2, tp - r2 @ c))
    return sols


def _skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


# --- P3P --------------------------------------------------------------------

def _pmul(a, b):
    return np.convolve(a, b)


def _psub(a, b):
    if len(a) < len(b):
        a = np.concatenate([a, np.zeros(len(b) - len(a))])
    elif len(b) < len(a):
        b = np.concatenate([b, np.zeros(len(a) - len(b))])
    return a - b


def p3p(xn: np.ndarray, xyz: np.ndarray):
    """All real P3P solutions (up to four) for three normalized image points.

    With camera distances ``s2 = u s1`` and ``s3 = v s1`` the law-of-cosines
    system reduces to two quadratics in ``u`` whose resultant is a quartic in ``v``.
    Polynomials are stored as ascending coefficient arrays.
    """
    f = np.column_stack([xn[:3], np.ones(3)])
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    X = xyz[:3]
    ca, cb, cg = f[1] @ f[2], f[0] @ f[2], f[0] @ f[1]
    a2 = np.sum((X[1] - X[2]) ** 2)
    b2 = np.sum((X[0] - X[2]) ** 2)
    c2 = np.sum((X[0] - X[1]) ** 2)
    if min(a2, b2, c2) <= 0:
        return []
    w = np.array([1.0, -2.0 * cb, 1.0])  # 1 + v^2 - 2 v cos(beta)
    p2 = np.array([b2])
    p1 = np.array([-2.0 * b2 * cg])
    p0 = _psub(np.array([b2]), c2 * w)
    q2 = np.array([b2])
    q1 = np.array([0.0, -2.0 * b2 * ca])
    q0 = _psub(np.array([0.0, 0.0, b2]), a2 * w)
    e = _psub(_pmul(p2, q0), _pmul(p0, q2))
    quart = _psub(_pmul(e, e), _pmul(_psub(_pmul(p2, q1), _pmul(p1, q2)),
                                     _psub(_pmul(p1, q0), _pmul(p0, q1))))
    quart = np.trim_zeros(quart, "b")
    if len(quart) < 2:
        return []
    desc = quart[::-1]
    ddesc = np.polyder(desc)
    sols = []
    for rt in np.roots(desc):
        if abs(rt.imag) > 1e-6 * max(1.0, abs(rt.real)):
            continue
        v = rt.real
        for _ in range(2):  # Newton polish
            dv = np.polyval(ddesc, v)
            if dv == 0:
                break
            v -= np.polyval(desc, v) / dv
        if v <= 0:
            continue
        den = 2.0 * b2 * (cg - ca * v)
        if den == 0:
            continue
        u = (np.polyval(p0[::-1], v) - np.polyval(q0[::-1], v)) / den
        wv = w[0] + w[1] * v + w[2] * v * v
        if u <= 0 or wv <= 0:
            continue
        s1 = np.sqrt(b2 / wv)
        pc = np.stack([s1 * f[0], u * s1 * f[1], v * s1 * f[2]])
        sols.append(kabsch(X, pc))
    return sols


# --- Levenberg-Marquardt ----------------------------------------------------

_GEN = np.stack([np.eye(3)[2], np.eye(3)[1], np.eye(3)[0]])  # yaw(z), pitch(y), roll(x)


def _residuals(r, t, xyz, uv, sw, k):
    xr = xyz @ r.T
    xc = xr + t
    z = xc[:, 2]
    if np.any(z <= EPS_DEPTH):
        return None, None, None
    iz = 1.0 / z
    res = np.empty(2 * len(z))
    res[0::2] = (k.fx * xc[:, 0] * iz + k.cx - uv[:, 0]) * sw
    res[1::2] = (k.fy * xc[:, 1] * iz + k.cy - uv[:, 1]) * sw
    return res, xr, xc


def lm_refine(r, t, xyz, uv, k: Intrinsics, weights=None, max_iter: int = 100,
              gtol: float = 1e-10, xtol: float = 1e-12, ftol: float = 1e-10):
    """Refine (R, t) by LM on weighted squared reprojection error.

    Rotation updates are left-multiplied Euler increments. Stops on a small
    gradient, a small step, or a relative cost decrease below ``ftol``.
    Returns ``(R, t, converged)``; steps are only accepted when the cost decreases.
    """
    sw = np.ones(len(xyz)) if weights is None else np.sqrt(np.asarray(weights, float))
    res, xr, xc = _residuals(r, t, xyz, uv, sw, k)
    if res is None:
        return r, t, False
    cost = res @ res
    lam = 1e-3
    n = len(xyz)
    J = np.zeros((2 * n, 6))
    for _ in range(max_iter):
        iz = 1.0 / xc[:, 2]
        a = k.fx * iz * sw
        b = k.fy * iz * sw
        c = -a * xc[:, 0] * iz
        e = -b * xc[:, 1] * iz
        x0, x1, x2 = xr[:, 0], xr[:, 1], xr[:, 2]
        # columns: yaw (z), pitch (y), roll (x) increments, then t
        J[0::2, 0] = -a * x1
        J[0::2, 1] = a * x2 - c * x0
        J[0::2, 2] = c * x1
        J[0::2, 3] = a
        J[0::2, 5] = c
        J[1::2, 0] = b * x0
        J[1::2, 1] = -e * x0
        J[1::2, 2] = e * x1 - b * x2
        J[1::2, 4] = b
        J[1::2, 5] = e
        g = J.T @ res
        if np.sqrt(g @ g) < gtol:
            return r, t, True
        H = J.T @ J
        diag = np.maximum(H.diagonal(), 1e-12)
        while True:
            Hd = H.copy()
            Hd[np.diag_indices(6)] += lam * diag
            try:
                step = np.linalg.solve(Hd, -g)
            except np.linalg.LinAlgError:
                lam *= 10
                if lam > 1e16:
                    return r, t, False
                continue
            if np.sqrt(step @ step) < xtol:
                return r, t, True
            r_new = euler_to_rotation(step[:3]) @ r
            t_new = t + step[3:]
            res_new, xr_new, xc_new = _residuals(r_new, t_new, xyz, uv, sw, k)
            if res_new is not None:
                cost_new = res_new @ res_new
                if cost_new < cost:
                    small = cost - cost_new <= ftol * cost
                    r, t, res, xr, xc, cost = r_new, t_new, res_new, xr_new, xc_new, cost_new
                    if small:
                        return r, t, True
                    lam = max(lam / 10, 1e-12)
                    break
            lam *= 10
            if lam > 1e16:
                return r, t, True  # no descent possible: stationary to precision
    return r, t, False


# --- public solver ----------------------------------------------------------

def _finalize(r, t, xyz, uv, k, weights, refine):
    rms0 = reprojection_rms_arrays(uv, xyz, r, t, k)
    converged = False
    if refine:
        r, t, converged = lm_refine(r, t, xyz, uv, k, weights)
    if np.any((xyz @ r.T + t)[:, 2] <= EPS_DEPTH):
        return None
    rms = reprojection_rms_arrays(uv, xyz, r, t, k)
    if not np.isfinite(rms):
        return None
    return PnpSolution(CameraPose.from_rt(r, t), rms, converged, rms0)


def pnp_candidates(uv, xyz, k: Intrinsics, weights=None, refine: bool = True) -> list[PnpSolution]:
    """Refined candidate poses for one correspondence set.

    Non-planar sets give one solution (the best EPnP root). Planar sets give
    both homography roots and three points give every feasible P3P root.
    Degenerate sets give an empty list.
    """
    uv = np.asarray(uv, float)
    xyz = np.asarray(xyz, float)
    n = len(xyz)
    if n < 3:
        raise ValueError("need at least 3 correspondences")
    xn = k.normalize(uv)
    if n == 3:
        if point_configuration(xyz) == "collinear":
            return []
        sols = [_finalize(r, t, xyz, uv, k, weights, refine) for r, t in p3p(xn, xyz)]
        return [s for s in sols if s is not None]
    config = point_configuration(xyz)
    if config == "collinear":
        return []
    if config == "planar":
        sols = [_finalize(r, t, xyz, uv, k, weights, refine) for r, t in _planar(xn, xyz)]
        return sorted([s for s in sols if s is not None], key=lambda s: s.rms_reprojection)
    # EPnP's 4-point case has a 4-D null space and often lands in the wrong
    # root; minimal P3P roots disambiguated by the remaining points are exact there
    linear = p3p(xn, xyz) if n == 4 else _epnp(xn, xyz)
    if n == 5:
        linear += p3p(xn, xyz)
    if not linear:
        return []
    rms = [reprojection_rms_arrays(uv, xyz, r, t, k) for r, t in linear]
    r, t = linear[int(np.argmin(rms))]
    sol = _finalize(r, t, xyz, uv, k, weights, refine)
    return [] if sol is None else [sol]


def solve_pnp_arrays(uv, xyz, k: Intrinsics, weights=None) -> PnpSolution | None:
    if len(xyz) < 4:
        raise ValueError("solve_pnp needs at least 4 correspondences")
    sols = pnp_candidates(uv, xyz, k, weights)
    return sols[0] if sols else None


def solve_pnp(matches, k: Intrinsics) -> PnpSolution | None:
    """Pose minimising reprojection error for >= 4 matches.

    Returns ``None`` for degenerate configurations (collinear or rank-deficient
    points, or every solution placing a point behind the camera).
    """
    uv, xyz, w = stack_matches(matches)
    return solve_pnp_arrays(uv, xyz, k, None if np.all(w == 1) else w)


def translation_for_rotation(uv, xyz, r: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Least-squares translation given a fixed rotation (linear in t)."""
    xn = k.normalize(np.asarray(uv, float))
    xr = np.asarray(xyz, float) @ r.T
    n = len(xr)
    A = np.zeros((2 * n, 3))
    b = np.zeros(2 * n)
    A[0::2, 0] = 1.0
    A[0::2, 2] = -xn[:, 0]
    b[0::2] = xn[:, 0] * xr[:, 2] - xr[:, 0]
    A[1::2, 1] = 1.0
    A[1::2, 2] = -xn[:, 1]
    b[1::2] = xn[:, 1] * xr[:, 2] - xr[:, 1]
    t, *_ = np.linalg.lstsq(A, b, rcond=None)
    return t

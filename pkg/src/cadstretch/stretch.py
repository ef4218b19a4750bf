"""Plane-based stretch deformation of model coordinates.

A stretch plane ``(n, d)`` splits space into two half-spaces. Points with
``x . n > d`` move by ``+tau/2`` along ``n``, points with ``x . n < d`` by
``-tau/2``; points on the plane stay put. The object's extent along ``n`` thus
grows by ``tau`` in total.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .mesh import TriMesh, bounding_box

ON_PLANE_TOL = 1e-12
STRETCH_CAP = 0.9  # max |tau| as a fraction of the bbox side along the plane normal


@dataclass(frozen=True)
class StretchPlane:
    n: np.ndarray
    d: float

    def __post_init__(self):
        n = np.array(self.n, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError(f"plane normal must be unit length, got |n|={np.linalg.norm(n)!r}")
        n.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "d", float(self.d))

    @classmethod
    def through(cls, point, normal) -> "StretchPlane":
        n = np.asarray(normal, float)
        n = n / np.linalg.norm(n)
        return cls(n, float(n @ np.asarray(point, float)))


@dataclass(frozen=True, eq=False)
class StretchSpec:
    planes: tuple[StretchPlane, ...]
    tau: np.ndarray = field(default=None)

    def __post_init__(self):
        planes = tuple(self.planes)
        tau = np.zeros(len(planes)) if self.tau is None else np.array(self.tau, dtype=float).reshape(-1)
        if len(planes) > 3:
            raise ValueError("at most 3 stretch planes")
        if len(tau) != len(planes):
            raise ValueError("tau must have one entry per plane")
        for i in range(len(planes)):
            for j in range(i + 1, len(planes)):
                if abs(planes[i].n @ planes[j].n) >= 1e-9:
                    raise ValueError("stretch planes must be pairwise orthogonal")
        tau.setflags(write=False)
        object.__setattr__(self, "planes", planes)
        object.__setattr__(self, "tau", tau)

    @property
    def normals(self) -> np.ndarray:
        return np.array([p.n for p in self.planes]).reshape(-1, 3)

    @property
    def offsets(self) -> np.ndarray:
        return np.array([p.d for p in self.planes])

    def with_tau(self, tau) -> "StretchSpec":
        return StretchSpec(self.planes, tau)

    def inverse(self) -> "StretchSpec":
        return StretchSpec(self.planes, -self.tau)

    def to_dict(self) -> dict:
        return {"planes": [{"n": p.n.tolist(), "d": p.d} for p in self.planes],
                "tau": self.tau.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "StretchSpec":
        return cls(tuple(StretchPlane(p["n"], p["d"]) for p in data["planes"]), data["tau"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "StretchSpec":
        return cls.from_dict(json.loads(text))


def side_signs(points: np.ndarray, normals: np.ndarray, offsets: np.ndarray,
               tol: float = ON_PLANE_TOL) -> np.ndarray:
    """Per-point, per-plane side indicator in {-1, 0, +1}; points within ``tol`` count as on-plane."""
    dist = np.asarray(points, float).reshape(-1, 3) @ normals.T - offsets
    s = np.sign(dist)
    s[np.abs(dist) <= tol] = 0.0
    return s


def displacement(signs: np.ndarray, normals: np.ndarray, tau: np.ndarray) -> np.ndarray:
    return (signs * (0.5 * tau)) @ normals


def stretch_points(points: np.ndarray, spec: StretchSpec) -> np.ndarray:
    pts = np.asarray(points, float).reshape(-1, 3)
    if not spec.planes:
        return pts.copy()
    n = spec.normals
    s = side_signs(pts, n, spec.offsets)
    return pts + displacement(s, n, spec.tau)


def stretch_point(x, spec: StretchSpec) -> np.ndarray:
    return stretch_points(np.asarray(x, float)[None], spec)[0]


def stretch_mesh(mesh: TriMesh, spec: StretchSpec) -> TriMesh:
    return mesh.with_vertices(stretch_points(mesh.vertices, spec))


def axis_planes(mesh: TriMesh) -> tuple[StretchPlane, ...]:
    """The three axis-aligned planes through the bbox center."""
    c = bounding_box(mesh).center
    return tuple(StretchPlane(e, float(c[i])) for i, e in enumerate(np.eye(3)))


def plane_extents(mesh: TriMesh, planes) -> np.ndarray:
    """Extent of the mesh along each plane normal."""
    return np.array([np.ptp(mesh.vertices @ p.n) for p in planes])


def tau_cap(mesh: TriMesh, planes) -> np.ndarray:
    return STRETCH_CAP * plane_extents(mesh, planes)


def random_stretch_spec(mesh: TriMesh, seed: int | np.random.Generator = 0,
                        low: float = -0.2, high: float = 0.3) -> StretchSpec:
    """Axis stretches of ``U[low, high]`` times the bbox side along each axis."""
    rng = np.random.default_rng(seed)
    planes = axis_planes(mesh)
    frac = rng.uniform(low, high, size=3)
    return StretchSpec(planes, frac * bounding_box(mesh).extent)


def magnitude_stretch_spec(mesh: TriMesh, magnitude: float, seed: int | np.random.Generator = 0,
                           signed: bool = False) -> StretchSpec:
    """Axis stretches of fixed relative magnitude.

    By default every axis is elongated, which the inverse stretch undoes
    exactly. With ``signed`` each axis gets a random sign; compression moves
    vertices within ``|tau|/2`` of a plane across it, which is not invertible.
    """
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=3) if signed else np.ones(3)
    return StretchSpec(axis_planes(mesh), signs * magnitude * bounding_box(mesh).extent)

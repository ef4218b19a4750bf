"""Pinhole camera: intrinsics, Euler-angle poses and projection.

Rotations use the Z-Y-X intrinsic convention, ``R = Rz(theta[0]) @ Ry(theta[1]) @ Rx(theta[2])``.
Camera frame is x right, y down, z forward; a model point ``x`` maps to
``Xc = R @ x + t``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

EPS_DEPTH = 1e-6
CONVENTION = "zyx-intrinsic"


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def square(cls, size: int = 256, focal: float = 280.0) -> "Intrinsics":
        return cls(focal, focal, size / 2.0, size / 2.0, size, size)

    def normalize(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, float)
        return np.stack([(uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy], axis=-1)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, float) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def euler_to_rotation(theta) -> np.ndarray:
    yaw, pitch, roll = (float(v) for v in theta)
    return _rz(yaw) @ _ry(pitch) @ _rx(roll)


def euler_rotation_and_derivatives(theta) -> tuple[np.ndarray, np.ndarray]:
    """Rotation matrix and its three partial derivatives, shape (3, 3, 3)."""
    yaw, pitch, roll = (float(v) for v in theta)
    rz, ry, rx = _rz(yaw), _ry(pitch), _rx(roll)
    cz, sz = math.cos(yaw), math.sin(yaw)
    cy, sy = math.cos(pitch), math.sin(pitch)
    cx, sx = math.cos(roll), math.sin(roll)
    drz = np.array([[-sz, -cz, 0.0], [cz, -sz, 0.0], [0.0, 0.0, 0.0]])
    dry = np.array([[-sy, 0.0, cy], [0.0, 0.0, 0.0], [-cy, 0.0, -sy]])
    drx = np.array([[0.0, 0.0, 0.0], [0.0, -sx, -cx], [0.0, cx, -sx]])
    ryx = ry @ rx
    d = np.stack([drz @ ryx, rz @ dry @ rx, rz @ ry @ drx])
    return rz @ ryx, d


def rotation_to_euler(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, float)
    sy = math.hypot(r[0, 0], r[1, 0])
    pitch = math.atan2(-r[2, 0], sy)
    if sy > 1e-9:
        yaw = math.atan2(r[1, 0], r[0, 0])
        roll = math.atan2(r[2, 1], r[2, 2])
    else:
        # gimbal lock: fold roll into yaw
        yaw = math.atan2(-r[0, 1], r[1, 1])
        roll = 0.0
    return wrap_angle(np.array([yaw, pitch, roll]))


def skew(w) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def rotation_angle_between(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic distance on SO(3), accurate for small angles."""
    chord = np.linalg.norm(np.asarray(r1) - np.asarray(r2))
    return 2.0 * math.asin(min(1.0, chord / (2.0 * math.sqrt(2.0))))


@dataclass(frozen=True, eq=False)
class CameraPose:
    theta: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        th = wrap_angle(np.array(self.theta, dtype=float).reshape(3))
        t = np.array(self.t, dtype=float).reshape(3)
        th.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "t", t)

    @classmethod
    def from_rt(cls, r: np.ndarray, t) -> "CameraPose":
        return cls(rotation_to_euler(r), t)

    @property
    def rotation(self) -> np.ndarray:
        return euler_to_rotation(self.theta)

    def transform(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, float).reshape(-1, 3) @ self.rotation.T + self.t

    def to_dict(self) -> dict:
        return {"theta": self.theta.tolist(), "t": self.t.tolist(), "convention": CONVENTION}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        if d.get("convention", CONVENTION) != CONVENTION:
            raise ValueError(f"unsupported rotation convention {d['convention']!r}")
        return cls(d["theta"], d["t"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "CameraPose":
        return cls.from_dict(json.loads(text))


def project_camera_points(xc: np.ndarray, k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Project camera-frame points. Returns pixels (NaN where invalid) and a validity mask."""
    z = xc[:, 2]
    valid = z > EPS_DEPTH
    zs = np.where(valid, z, np.nan)
    uv = np.stack([k.fx * xc[:, 0] / zs + k.cx, k.fy * xc[:, 1] / zs + k.cy], axis=1)
    return uv, valid


def project_points(points: np.ndarray, pose: CameraPose, k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    return project_camera_points(pose.transform(points), k)


def project(x, pose: CameraPose, k: Intrinsics) -> np.ndarray | None:
    """Pixel of a single model point, or ``None`` when it lies behind the camera."""
    uv, valid = project_points(np.asarray(x, float)[None], pose, k)
    return uv[0] if valid[0] else None


def look_at_pose(azimuth: float, elevation: float, distance: float,
                 target=(0.0, 0.0, 0.0)) -> CameraPose:
    """Camera on a view sphere around ``target`` looking at it, world up = +y.

    Azimuth 0 / elevation 0 puts the camera on the +z axis.
    """
    if distance <= 0:
        raise ValueError("distance must be positive")
    target = np.asarray(target, float)
    ce = math.cos(elevation)
    center = target + distance * np.array([ce * math.sin(azimuth), math.sin(elevation),
                                           ce * math.cos(azimuth)])
    fwd = target - center
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd])
    return CameraPose.from_rt(r, -r @ center)

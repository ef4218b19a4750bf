"""Triangle meshes: OBJ I/O, bounding boxes, canonical rescale and surface sampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Raised for meshes that violate the TriMesh invariants."""


class MeshParseError(MeshError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def triangle_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    tri = vertices[faces]
    return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Vertex/face soup in the model's canonical frame.

    Arrays are copied on construction and made read-only.
    """

    vertices: np.ndarray
    faces: np.ndarray
    name: str = "mesh"

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        f = np.array(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) == 0:
            raise MeshError("vertices must be a non-empty (V, 3) array")
        if f.ndim != 2 or f.shape[1] != 3 or len(f) == 0:
            raise MeshError("mesh has no faces")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinate")
        if f.min() < 0 or f.max() >= len(v):
            raise MeshError(f"face index out of range for {len(v)} vertices")
        if not np.any(triangle_areas(v, f) > 0):
            raise MeshError("all faces have zero area")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "faces", _frozen(f))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.faces)

    def with_vertices(self, vertices: np.ndarray, name: str | None = None) -> "TriMesh":
        return TriMesh(vertices, self.faces, self.name if name is None else name)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "TriMesh":
        return self.with_vertices(self.vertices @ np.asarray(rotation).T + np.asarray(translation))


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def longest_edge(self) -> float:
        return float(np.max(self.extent))


@dataclass(frozen=True, eq=False)
class SurfaceSample:
    points: np.ndarray
    source: str
    face_index: np.ndarray | None = None

    def __len__(self):
        return len(self.points)


def _parse_index(token: str, n_vertices: int, line: int) -> int:
    head = token.split("/")[0]
    try:
        idx = int(head)
    except ValueError:
        raise MeshParseError(f"bad face index {token!r}", line) from None
    if idx < 0:
        idx = n_vertices + idx + 1
    if idx < 1 or idx > n_vertices:
        raise MeshParseError(f"face index {head} out of range for {n_vertices} vertices", line)
    return idx - 1


def parse_obj(text: str, name: str = "mesh") -> TriMesh:
    """Parse the ``v``/``f`` subset of Wavefront OBJ.

    Polygons are fan-triangulated. All other record types are ignored.
    """
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshParseError("vertex needs 3 coordinates", lineno)
            try:
                vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError:
                raise MeshParseError(f"bad vertex coordinate in {raw.strip()!r}", lineno) from None
        elif tag == "f":
            if len(parts) < 4:
                raise MeshParseError("face needs at least 3 vertices", lineno)
            idx = [_parse_index(tok, len(vertices), lineno) for tok in parts[1:]]
            for i in range(1, len(idx) - 1):
                faces.append((idx[0], idx[i], idx[i + 1]))
    if not vertices or not faces:
        raise MeshError("empty mesh")
    return TriMesh(np.array(vertices), np.array(faces), name)


def load_mesh(path: str | Path) -> TriMesh:
    path = Path(path)
    return parse_obj(path.read_text(), name=path.stem)


def format_obj(mesh: TriMesh) -> str:
    lines = ["v %.9f %.9f %.9f" % tuple(v) for v in mesh.vertices]
    lines += ["f %d %d %d" % tuple(f + 1) for f in mesh.faces]
    return "\n".join(lines) + "\n"


def save_mesh(mesh: TriMesh, path: str | Path) -> None:
    Path(path).write_text(format_obj(mesh))


def bounding_box(mesh: TriMesh) -> Aabb:
    return Aabb(mesh.vertices.min(axis=0), mesh.vertices.max(axis=0))


def rescale_longest_edge(mesh: TriMesh, target: float = 10.0) -> tuple[TriMesh, float]:
    """Scale uniformly about the bbox center so the longest bbox edge equals ``target``."""
    box = bounding_box(mesh)
    longest = box.longest_edge
    if longest <= 0:
        raise MeshError("degenerate bounding box")
    scale = target / longest
    if scale == 1.0:
        return mesh, 1.0
    c = box.center
    return mesh.with_vertices(c + (mesh.vertices - c) * scale), scale


def sample_surface(mesh: TriMesh, n: int, seed: int | np.random.Generator = 0) -> SurfaceSample:
    """Draw ``n`` points area-weighted over faces, uniform within each face."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    face = np.searchsorted(cdf, rng.random(n), side="right")
    face = np.minimum(face, len(areas) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.vertices[mesh.faces[face]]
    pts = (
        (1.0 - r1)[:, None] * tri[:, 0]
        + (r1 * (1.0 - r2))[:, None] * tri[:, 1]
        + (r1 * r2)[:, None] * tri[:, 2]
    )
    return SurfaceSample(_frozen(pts), mesh.name, _frozen(face))


def write_samples_csv(sample: SurfaceSample, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z"])
        w.writerows(sample.points.tolist())


def box_mesh(lo, hi, name: str = "box") -> TriMesh:
    """Axis-aligned box with outward-facing triangles."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    v = np.array([[hi[0] if i & 1 else lo[0], hi[1] if i & 2 else lo[1], hi[2] if i & 4 else lo[2]]
                  for i in range(8)])
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    f = []
    for a, b, c, d in quads:
        f += [(a, b, c), (a, c, d)]
    return TriMesh(v, np.array(f), name)


def merge_meshes(meshes: list[TriMesh], name: str = "mesh") -> TriMesh:
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += m.n_vertices
    return TriMesh(np.vstack(verts), np.vstack(faces), name)

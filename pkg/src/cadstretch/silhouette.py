"""Point-sampled silhouette overlap between a reprojected model and a mask.

Pixel ``(row, col)`` has its center at continuous image coordinate
``(u, v) = (col, row)``, matching the camera module's projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .camera import CameraPose, Intrinsics, project_points
from .mesh import SurfaceSample
from .stretch import StretchSpec, stretch_points


class EmptyMaskError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mask:
    grid: np.ndarray

    def __post_init__(self):
        g = np.array(self.grid, dtype=bool)
        if g.ndim != 2:
            raise ValueError("mask grid must be 2D")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def area(self) -> int:
        return int(self.grid.sum())

    def pixel_centers(self) -> np.ndarray:
        rows, cols = np.nonzero(self.grid)
        return np.column_stack([cols, rows]).astype(float)

    def iou(self, other: "Mask") -> float:
        inter = np.logical_and(self.grid, other.grid).sum()
        union = np.logical_or(self.grid, other.grid).sum()
        return float(inter / union) if union else 1.0

    def __eq__(self, other):
        return isinstance(other, Mask) and np.array_equal(self.grid, other.grid)


@dataclass(frozen=True)
class SilhouetteScore:
    value: float
    n_model_points: int
    n_mask_points: int
    q: float

    @property
    def valid(self) -> bool:
        return math.isfinite(self.value)

    def to_dict(self) -> dict:
        return {"value": self.value if self.valid else None, "n_model_points": self.n_model_points,
                "n_mask_points": self.n_mask_points, "q": self.q}


INVALID = float("inf")


# --- PBM --------------------------------------------------------------------

def _pbm_tokens(data: bytes):
    i, n = 0, len(data)
    while i < n:
        c = data[i:i + 1]
        if c == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < n and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
                j += 1
            yield data[i:j], j
            i = j


def read_pbm(path: str | Path) -> Mask:
    """Read a plain (P1) or raw (P4) PBM bitmap; foreground is 1."""
    data = Path(path).read_bytes()
    tokens = _pbm_tokens(data)
    magic, _ = next(tokens)
    w = int(next(tokens)[0])
    h, end = next(tokens)
    h = int(h)
    if magic == b"P4":
        raw = np.frombuffer(data[end + 1:], dtype=np.uint8)
        row_bytes = (w + 7) // 8
        if raw.size < row_bytes * h:
            raise ValueError("truncated P4 data")
        bits = np.unpackbits(raw[:row_bytes * h].reshape(h, row_bytes), axis=1)[:, :w]
        return Mask(bits.astype(bool))
    if magic != b"P1":
        raise ValueError(f"not a PBM file: magic {magic!r}")
    rest = data[end:]
    lines = rest.decode("ascii", "ignore").splitlines()
    bits = [ch for ln in lines for ch in ln.split("#", 1)[0] if ch in "01"]
    if len(bits) < w * h:
        raise ValueError("truncated P1 data")
    return Mask(np.array(bits[:w * h], dtype=np.uint8).reshape(h, w).astype(bool))


def write_pbm(mask: Mask, path: str | Path, binary: bool = True) -> None:
    h, w = mask.grid.shape
    if binary:
        packed = np.packbits(mask.grid.astype(np.uint8), axis=1)
        Path(path).write_bytes(b"P4\n%d %d\n" % (w, h) + packed.tobytes())
    else:
        rows = [" ".join("1" if b else "0" for b in row) for row in mask.grid]
        Path(path).write_text(f"P1\n{w} {h}\n" + "\n".join(rows) + "\n")


# --- sampling and rasterisation ---------------------------------------------

def sample_mask(mask: Mask, n: int, seed: int | np.random.Generator = 0) -> np.ndarray:
    """``n`` points uniform over the foreground area (pixel center plus jitter)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    centers = mask.pixel_centers()
    if len(centers) == 0:
        raise EmptyMaskError("mask has no foreground pixels")
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, len(centers), size=n)
    return centers[pick] + rng.uniform(-0.5, 0.5, size=(n, 2))


def disk_footprint(radius: float) -> np.ndarray:
    r = int(math.floor(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx * xx + yy * yy <= radius * radius


def mean_nn_spacing(points: np.ndarray) -> float:
    if len(points) < 2:
        return 1.0
    d, _ = cKDTree(points).query(points, k=2)
    return float(np.mean(d[:, 1]))


def stamp_mask(points: np.ndarray, width: int, height: int, radius: float | None = None,
               closing: bool = False) -> Mask:
    """Rasterise projected points by disk stamping followed by an erosion.

    The erosion (radius - 1) pulls the stamped boundary back towards the true
    outline while keeping the gaps between samples closed. With ``closing`` the
    erosion uses the full radius, which removes the one-pixel fattening but
    needs dense samples to stay hole-free. ``radius`` defaults to 1.5x the mean
    nearest-neighbour spacing of the points.
    """
    pts = np.asarray(points, float)
    if radius is None:
        radius = 1.5 * mean_nn_spacing(pts)
    radius = max(float(radius), 1.0)
    grid = np.zeros((height, width), dtype=bool)
    ij = np.rint(pts).astype(np.int64)
    inside = (ij[:, 0] >= 0) & (ij[:, 0] < width) & (ij[:, 1] >= 0) & (ij[:, 1] < height)
    grid[ij[inside, 1], ij[inside, 0]] = True
    pad = int(math.ceil(radius)) + 1
    grid = np.pad(grid, pad)
    grid = ndimage.binary_dilation(grid, structure=disk_footprint(radius))
    erode = radius if closing else radius - 1.0
    if erode >= 1.0:
        grid = ndimage.binary_erosion(grid, structure=disk_footprint(erode))
    return Mask(grid[pad:-pad, pad:-pad])


def render_mask(sample: SurfaceSample | np.ndarray, pose: CameraPose, k: Intrinsics,
                spec: StretchSpec | None = None, radius: float | None = None) -> Mask:
    pts = sample.points if isinstance(sample, SurfaceSample) else np.asarray(sample, float)
    if spec is not None:
        pts = stretch_points(pts, spec)
    uv, valid = project_points(pts, pose, k)
    return stamp_mask(uv[valid], k.width, k.height, radius)


# --- scoring ----------------------------------------------------------------

def _top_fraction_count(q: float, n: int) -> int:
    return max(1, min(n, math.ceil(round(q * n, 9))))


def _top_mean(d: np.ndarray, q: float) -> float:
    m = _top_fraction_count(q, len(d))
    if m == len(d):
        return float(np.mean(d))
    return float(np.mean(np.partition(d, len(d) - m)[len(d) - m:]))


class PointIndex:
    """Nearest-neighbour index over a fixed 2D point set, reusable across poses."""

    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, float).reshape(-1, 2)
        if len(self.points) == 0:
            raise ValueError("empty point set")
        self.tree = cKDTree(self.points)

    def __len__(self):
        return len(self.points)

    def distances(self, query: np.ndarray) -> np.ndarray:
        d, _ = self.tree.query(np.asarray(query, float).reshape(-1, 2))
        return d


def truncated_chamfer(a, b, q: float = 0.2, per_direction: bool = False) -> SilhouetteScore:
    """Mean of the largest ``ceil(q * (|a| + |b|))`` bidirectional NN distances.

    ``a`` and ``b`` are point arrays or :class:`PointIndex` objects. With
    ``per_direction`` the truncated mean is taken in each direction separately
    and the two means are averaged.
    """
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    ia = a if isinstance(a, PointIndex) else PointIndex(a)
    ib = b if isinstance(b, PointIndex) else PointIndex(b)
    d_ab = ib.distances(ia.points)
    d_ba = ia.distances(ib.points)
    if per_direction:
        value = 0.5 * (_top_mean(d_ab, q) + _top_mean(d_ba, q))
    else:
        value = _top_mean(np.concatenate([d_ab, d_ba]), q)
    return SilhouetteScore(value, len(ia), len(ib), q)


def score_projected(uv: np.ndarray, valid: np.ndarray, mask_points, q: float = 0.2,
                    per_direction: bool = False) -> SilhouetteScore:
    n_mask = len(mask_points)
    if not np.all(valid):
        return SilhouetteScore(INVALID, len(uv), n_mask, q)
    return truncated_chamfer(uv, mask_points, q, per_direction)


def score_pose(mesh_samples: SurfaceSample | np.ndarray, spec: StretchSpec | None, pose: CameraPose,
               k: Intrinsics, mask_points, q: float = 0.2,
               per_direction: bool = False) -> SilhouetteScore:
    """Silhouette score of a (stretched) model under ``pose``; infinite if any sample is behind the camera."""
    pts = mesh_samples.points if isinstance(mesh_samples, SurfaceSample) else np.asarray(mesh_samples)
    if spec is not None and len(spec.planes):
        pts = stretch_points(pts, spec)
    uv, valid = project_points(pts, pose, k)
    return score_projected(uv, valid, mask_points, q, per_direction)

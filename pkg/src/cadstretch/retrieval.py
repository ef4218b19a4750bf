"""Silhouette-descriptor retrieval over a view-grid rendering database.

Every database model is rendered as point-stamped silhouettes from 16 azimuths
x 4 elevations. A query mask is compared with each view after both are
normalised to a unit box (isotropic, bbox-centred) and quantised to a
``GRID x GRID`` lattice; the score is the all-pairs (q=1) truncated chamfer
between the occupied cells, evaluated exactly through distance transforms.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage, sparse

from .camera import CameraPose, Intrinsics, look_at_pose, project_points
from .mesh import TriMesh, bounding_box, sample_surface
from .silhouette import EmptyMaskError, Mask, read_pbm, stamp_mask, write_pbm

GRID = 128
FILL = 0.7


@dataclass(frozen=True)
class ViewGrid:
    azimuths: tuple[float, ...] = tuple(np.deg2rad(np.arange(16) * 22.5))
    elevations: tuple[float, ...] = tuple(np.deg2rad([0.0, 15.0, 30.0, 45.0]))
    fill: float = FILL

    def __len__(self):
        return len(self.azimuths) * len(self.elevations)

    def angles(self) -> list[tuple[float, float]]:
        return [(az, el) for el in self.elevations for az in self.azimuths]

    def distance(self, mesh: TriMesh, k: Intrinsics) -> float:
        """Camera distance at which the bounding sphere spans ``fill`` of the image height."""
        c = bounding_box(mesh).center
        radius = float(np.max(np.linalg.norm(mesh.vertices - c, axis=1)))
        half = math.atan(0.5 * self.fill * k.height / k.fy)
        return radius / math.sin(half)

    def poses(self, mesh: TriMesh, k: Intrinsics) -> list[CameraPose]:
        d = self.distance(mesh, k)
        c = bounding_box(mesh).center
        return [look_at_pose(az, el, d, target=c) for az, el in self.angles()]


@dataclass(frozen=True, eq=False)
class RenderedView:
    model_id: str
    view_index: int
    pose: CameraPose
    points: np.ndarray
    mask: Mask
    category: str = ""

    @property
    def key(self) -> tuple[str, int]:
        return (self.model_id, self.view_index)


def normalized_cells(mask: Mask, grid: int = GRID) -> np.ndarray:
    """Occupied lattice cells (row, col) of the bbox-normalised foreground."""
    pts = mask.pixel_centers()
    if len(pts) == 0:
        raise EmptyMaskError("mask has no foreground pixels")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    side = max(float(np.max(hi - lo)), 1.0)
    unit = (pts - 0.5 * (lo + hi)) / side + 0.5
    cells = np.rint(unit * (grid - 1)).astype(np.int64)
    cells = np.unique(cells[:, ::-1], axis=0)
    return cells


def cell_distance_field(cells: np.ndarray, grid: int = GRID) -> np.ndarray:
    occ = np.zeros((grid, grid), dtype=bool)
    occ[cells[:, 0], cells[:, 1]] = True
    return ndimage.distance_transform_edt(~occ) / (grid - 1)


def cell_points(cells: np.ndarray, grid: int = GRID) -> np.ndarray:
    """Cell centers as unit-box (x, y) points, for cross-checking with truncated_chamfer."""
    return cells[:, ::-1].astype(float) / (grid - 1)


class ViewIndex:
    """Precomputed descriptors for vectorised scoring of a query against all views."""

    def __init__(self, views: list[RenderedView], grid: int = GRID):
        if not views:
            raise ValueError("empty view database")
        self.views = list(views)
        self.grid = grid
        cells = [normalized_cells(v.mask, grid) for v in self.views]
        # (V, G*G) distance fields and a sparse (V, G*G) occupancy matrix
        self.fields = np.stack([cell_distance_field(c, grid).ravel() for c in cells])
        self.counts = np.array([len(c) for c in cells])
        cols = np.concatenate([c[:, 0] * grid + c[:, 1] for c in cells])
        rows = np.repeat(np.arange(len(cells)), self.counts)
        self.occupancy = sparse.csr_matrix((np.ones(len(cols)), (rows, cols)), shape=(len(cells), grid * grid))
        self._order_keys = [(v.model_id, v.view_index) for v in self.views]

    def __len__(self):
        return len(self.views)

    def scores(self, query: Mask) -> np.ndarray:
        """Mean bidirectional cell distance between the query and every view."""
        qc = normalized_cells(query, self.grid)
        qfield = cell_distance_field(qc, self.grid).ravel()
        qocc = np.zeros(self.grid * self.grid)
        qocc[qc[:, 0] * self.grid + qc[:, 1]] = 1.0
        to_view = self.fields @ qocc
        from_view = self.occupancy @ qfield
        return (to_view + from_view) / (len(qc) + self.counts)

    def rank(self, query: Mask) -> list[int]:
        s = self.scores(query)
        # primary key: score; ties by (model id, view index)
        keys = sorted(range(len(s)), key=self._order_keys.__getitem__)
        pos = np.empty(len(s), dtype=np.int64)
        pos[keys] = np.arange(len(s))
        return np.lexsort((pos, s)).tolist()


def render_view(mesh: TriMesh, points_model: np.ndarray, pose: CameraPose, k: Intrinsics,
                model_id: str, view_index: int, category: str = "") -> RenderedView:
    uv, valid = project_points(points_model, pose, k)
    uv = uv[valid]
    mask = stamp_mask(uv, k.width, k.height)
    return RenderedView(model_id, view_index, pose, uv, mask, category)


def build_view_database(models, grid: ViewGrid | None = None, k: Intrinsics | None = None,
                        seed: int = 0, n_points: int = 2000) -> list[RenderedView]:
    """Render every model on the view grid.

    ``models`` is a list of meshes or of ``(model_id, mesh, category)`` tuples.
    Surface samples are drawn once per model and reused for all its views.
    """
    models = list(models)
    if not models:
        raise ValueError("no models to render")
    grid = grid or ViewGrid()
    k = k or Intrinsics.square()
    out = []
    for mi, entry in enumerate(models):
        if isinstance(entry, TriMesh):
            model_id, mesh, category = entry.name, entry, ""
        else:
            model_id, mesh, category = entry
        pts = sample_surface(mesh, n_points, np.random.default_rng([seed, mi])).points
        for vi, pose in enumerate(grid.poses(mesh, k)):
            out.append(render_view(mesh, pts, pose, k, model_id, vi, category))
    return out


def retrieve(query_mask: Mask, db: list[RenderedView] | ViewIndex, top_n: int = 10) -> list[RenderedView]:
    """Database views ranked by silhouette similarity to ``query_mask`` (best first)."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    index = db if isinstance(db, ViewIndex) else ViewIndex(db)
    return [index.views[i] for i in index.rank(query_mask)[:top_n]]


def save_view_database(views: list[RenderedView], directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for v in views:
        stem = f"{v.model_id}_{v.view_index:02d}"
        write_pbm(v.mask, d / f"{stem}.pbm")
        (d / f"{stem}.json").write_text(json.dumps({
            "model_id": v.model_id, "view_index": v.view_index, "category": v.category,
            "pose": v.pose.to_dict()}, indent=1))
        with open(d / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "v"])
            w.writerows(v.points.tolist())


def load_view_database(directory: str | Path) -> list[RenderedView]:
    d = Path(directory)
    views = []
    for meta_path in sorted(d.glob("*.json")):
        meta = json.loads(meta_path.read_text())
        stem = meta_path.stem
        pts = np.loadtxt(d / f"{stem}.csv", delimiter=",", skiprows=1, ndmin=2)
        views.append(RenderedView(meta["model_id"], int(meta["view_index"]),
                                  CameraPose.from_dict(meta["pose"]), pts,
                                  read_pbm(d / f"{stem}.pbm"), meta.get("category", "")))
    views.sort(key=lambda v: v.key)
    return views

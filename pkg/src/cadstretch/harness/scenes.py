"""Synthetic scenes: a posed (optionally stretched) model, its mask and keypoint matches."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..camera import CameraPose, Intrinsics, look_at_pose, project_points
from ..mesh import TriMesh, bounding_box, sample_surface
from ..pnp import Match, matches_from_arrays, write_matches_csv
from ..retrieval import ViewGrid
from ..silhouette import Mask, disk_footprint, stamp_mask, write_pbm
from ..stretch import StretchSpec, stretch_points

MASK_SAMPLES = 20000


@dataclass(frozen=True, eq=False)
class SceneSpec:
    scene_id: str
    model_id: str
    gt_pose: CameraPose
    gt_stretch: StretchSpec | None
    intrinsics: Intrinsics
    n_matches: int = 12
    inlier_count: int = 5
    pixel_noise_sigma: float = 0.0
    seed: int = 0
    mask_noise_px: int = 0
    outlier_mode: str = "mask"

    def __post_init__(self):
        if not 0 <= self.inlier_count <= self.n_matches:
            raise ValueError("inlier_count must lie in [0, n_matches]")
        if self.outlier_mode not in ("mask", "image"):
            raise ValueError(f"unknown outlier mode {self.outlier_mode!r}")

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "model_id": self.model_id, "gt_pose": self.gt_pose.to_dict(),
                "gt_stretch": None if self.gt_stretch is None else self.gt_stretch.to_dict(),
                "intrinsics": self.intrinsics.to_dict(), "n_matches": self.n_matches,
                "inlier_count": self.inlier_count, "pixel_noise_sigma": self.pixel_noise_sigma,
                "seed": self.seed, "mask_noise_px": self.mask_noise_px, "outlier_mode": self.outlier_mode}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        st = d.get("gt_stretch")
        return cls(d["scene_id"], d["model_id"], CameraPose.from_dict(d["gt_pose"]),
                   None if st is None else StretchSpec.from_dict(st), Intrinsics.from_dict(d["intrinsics"]),
                   int(d["n_matches"]), int(d["inlier_count"]), float(d["pixel_noise_sigma"]), int(d["seed"]),
                   int(d.get("mask_noise_px", 0)), d.get("outlier_mode", "mask"))


@dataclass(frozen=True, eq=False)
class Scene:
    spec: SceneSpec
    matches: list[Match]
    mask: Mask
    inlier_points: np.ndarray  # unstretched model points behind the inlier matches
    inlier_pixels: np.ndarray
    is_inlier: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    def gt_record(self, category: str = "") -> dict:
        return {"scene_id": self.spec.scene_id, "model_id": self.spec.model_id, "category": category,
                "pose": self.spec.gt_pose.to_dict(),
                "stretch": None if self.spec.gt_stretch is None else self.spec.gt_stretch.to_dict()}


def random_scene_pose(mesh: TriMesh, k: Intrinsics, rng: np.random.Generator) -> CameraPose:
    """Camera on a jittered view sphere: any azimuth, 5-40 deg elevation, 0.9-1.2x framing distance."""
    az = rng.uniform(0, 2 * math.pi)
    el = math.radians(rng.uniform(5, 40))
    dist = ViewGrid().distance(mesh, k) * rng.uniform(0.9, 1.2)
    box = bounding_box(mesh)
    target = box.center + rng.uniform(-0.05, 0.05, 3) * box.extent
    return look_at_pose(az, el, dist, target)


def perturb_mask(mask: Mask, px: int) -> Mask:
    """Dilate (px > 0) or erode (px < 0) by a disk, simulating segmentation error."""
    if px == 0:
        return mask
    fp = disk_footprint(abs(px))
    op = ndimage.binary_dilation if px > 0 else ndimage.binary_erosion
    return Mask(op(mask.grid, structure=fp))


def _outlier_pixels(n: int, mask: Mask, k: Intrinsics, mode: str, rng) -> np.ndarray:
    if n == 0:
        return np.zeros((0, 2))
    if mode == "mask":
        centers = mask.pixel_centers()
        return centers[rng.integers(0, len(centers), n)] + rng.uniform(-0.5, 0.5, (n, 2))
    return rng.uniform([-0.5, -0.5], [k.width - 0.5, k.height - 0.5], (n, 2))


def generate_scene(spec: SceneSpec, model: TriMesh) -> Scene:
    """Mask plus matches for ``model`` seen under ``spec.gt_pose`` and ``spec.gt_stretch``.

    Inliers pair a surface point with its noisy projection; outliers pair a
    random surface point with a random mask pixel (or image pixel). Matches
    are returned in shuffled order.
    """
    rng = np.random.default_rng([spec.seed, 17])
    k = spec.intrinsics
    stretch = (lambda p: stretch_points(p, spec.gt_stretch)) if spec.gt_stretch is not None else (lambda p: p)
    dense = stretch(sample_surface(model, MASK_SAMPLES, rng).points)
    uv_dense, valid = project_points(dense, spec.gt_pose, k)
    mask = perturb_mask(stamp_mask(uv_dense[valid], k.width, k.height, closing=True), spec.mask_noise_px)

    # inliers must land inside the image
    pts = np.zeros((0, 3))
    pix = np.zeros((0, 2))
    while len(pts) < spec.inlier_count:
        cand = sample_surface(model, 4 * spec.inlier_count + 4, rng).points
        uv, ok = project_points(stretch(cand), spec.gt_pose, k)
        ok &= (uv[:, 0] >= -0.5) & (uv[:, 0] < k.width - 0.5) & (uv[:, 1] >= -0.5) & (uv[:, 1] < k.height - 0.5)
        pts = np.vstack([pts, cand[ok]])[:spec.inlier_count]
        pix = np.vstack([pix, uv[ok]])[:spec.inlier_count]
    noisy = pix + rng.normal(0, spec.pixel_noise_sigma, pix.shape) if spec.pixel_noise_sigma > 0 else pix

    n_out = spec.n_matches - spec.inlier_count
    out_xyz = sample_surface(model, max(n_out, 1), rng).points[:n_out]
    out_uv = _outlier_pixels(n_out, mask, k, spec.outlier_mode, rng)

    uv_all = np.vstack([noisy, out_uv])
    xyz_all = np.vstack([pts, out_xyz])
    inl = np.arange(spec.n_matches) < spec.inlier_count
    order = rng.permutation(spec.n_matches)
    return Scene(spec, matches_from_arrays(uv_all[order], xyz_all[order]), mask, pts, noisy, inl[order])


def retrieval_matches(scene: Scene, same_model: bool, db_mesh: TriMesh, db_spec: StretchSpec | None,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Matches between the scene image and one retrieved database model.

    When the retrieval shows the scene's own base model, inlier keypoints map to
    the same surface point of the (possibly stretched) database copy; any other
    model receives outliers only.
    """
    spec = scene.spec
    n_in = len(scene.inlier_points) if same_model else 0
    n_out = spec.n_matches - n_in
    xyz_in = scene.inlier_points if db_spec is None else stretch_points(scene.inlier_points, db_spec)
    uv_in = scene.inlier_pixels
    out_xyz = sample_surface(db_mesh, max(n_out, 1), rng).points[:n_out]
    out_uv = _outlier_pixels(n_out, scene.mask, spec.intrinsics, spec.outlier_mode, rng)
    uv = np.vstack([uv_in[:n_in], out_uv])
    xyz = np.vstack([xyz_in[:n_in], out_xyz])
    order = rng.permutation(len(uv))
    return uv[order], xyz[order]


def save_scene(scene: Scene, directory: str | Path, category: str = "") -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    sid = scene.spec.scene_id
    write_matches_csv(scene.matches, d / f"{sid}_matches.csv")
    write_pbm(scene.mask, d / f"{sid}_mask.pbm")
    rec = scene.gt_record(category)
    rec["spec"] = scene.spec.to_dict()
    (d / f"{sid}_gt.json").write_text(json.dumps(rec, indent=1))

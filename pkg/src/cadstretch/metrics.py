"""Shape metrics: F1 at a distance threshold and COCO-style mesh AP."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .camera import CameraPose
from .mesh import MeshError, TriMesh, bounding_box, sample_surface
from .stretch import StretchSpec, stretch_mesh

F1_TAU = 0.3
F1_SAMPLES = 10000
RESCALE_EDGE = 10.0
THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
CONFIDENCE_SIGMA = 10.0


@dataclass(frozen=True)
class F1Result:
    precision: float
    recall: float
    f1: float
    tau: float

    def to_dict(self) -> dict:
        return asdict(self)


def f1_points(pred: np.ndarray, gt: np.ndarray, tau: float = F1_TAU) -> F1Result:
    """F1 between two point sets already in a common, rescaled frame."""
    pred = np.asarray(pred, float)
    gt = np.asarray(gt, float)
    if len(pred) == 0 or len(gt) == 0:
        raise ValueError("empty point set")
    d_pg, _ = cKDTree(gt).query(pred)
    d_gp, _ = cKDTree(pred).query(gt)
    p = float(np.mean(d_pg <= tau))
    r = float(np.mean(d_gp <= tau))
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return F1Result(p, r, f1, tau)


def f1_score(pred: TriMesh, pred_pose: CameraPose, gt: TriMesh, gt_pose: CameraPose,
             tau: float = F1_TAU, n_samples: int = F1_SAMPLES, seed: int = 0,
             pred_stretch: StretchSpec | None = None) -> F1Result:
    """F1 between a posed (optionally stretched) prediction and the posed ground truth.

    Both shapes are brought into the camera frame and scaled by the factor that
    makes the GT bounding box's longest edge 10. Both meshes are sampled with
    the same seed, so identical inputs give F1 = 1 exactly.
    """
    if pred_stretch is not None and len(pred_stretch.planes):
        pred = stretch_mesh(pred, pred_stretch)
    edge = bounding_box(gt).longest_edge
    if not edge > 0:
        raise MeshError("ground-truth mesh has a degenerate bounding box")
    scale = RESCALE_EDGE / edge
    a = sample_surface(pred, n_samples, seed).points
    b = sample_surface(gt, n_samples, seed).points
    a = pred_pose.transform(a) * scale
    b = gt_pose.transform(b) * scale
    return f1_points(a, b, tau)


def confidence_from_score(score: float, sigma: float = CONFIDENCE_SIGMA) -> float:
    """Detection confidence from a silhouette score in pixels; 0 for invalid scores."""
    if not math.isfinite(score):
        return 0.0
    return math.exp(-score / sigma)


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    category: str
    confidence: float
    f1_value: float
    matched_gt: str | None = None
    gt_category: str | None = None

    def __post_init__(self):
        if not math.isfinite(self.confidence):
            raise ValueError("confidence must be finite")

    @property
    def target_category(self) -> str:
        return self.category if self.gt_category is None else self.gt_category

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionRecord":
        return cls(str(d["image_id"]), str(d["category"]), float(d["confidence"]), float(d["f1_value"]),
                   d.get("matched_gt"), d.get("gt_category"))


def write_records(records, path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_records(path: str | Path) -> list[DetectionRecord]:
    with open(path) as fh:
        return [DetectionRecord.from_dict(json.loads(ln)) for ln in fh if ln.strip()]


def _pr_area(tp: np.ndarray, n_gt: int) -> float:
    if n_gt <= 0:
        return float("nan")
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    recall = ctp / n_gt
    env = np.maximum.accumulate(precision[::-1])[::-1]
    dr = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(dr * env))


def average_precision(records, n_gt: dict[str, int], threshold: float) -> dict[str, float]:
    """Per-category AP at one F1 threshold.

    Records are ranked by descending confidence (stable). A record is a true
    positive when its category matches the GT's, ``f1_value > threshold`` and
    its GT has not been claimed by a higher-ranked true positive.
    """
    out = {}
    for cat, count in sorted(n_gt.items()):
        recs = [r for r in records if r.category == cat]
        order = sorted(range(len(recs)), key=lambda i: -recs[i].confidence)
        claimed = set()
        tp = np.zeros(len(recs))
        for j, i in enumerate(order):
            r = recs[i]
            if r.matched_gt is None or r.target_category != cat or not r.f1_value > threshold:
                continue
            if r.matched_gt in claimed:
                continue
            claimed.add(r.matched_gt)
            tp[j] = 1.0
        out[cat] = _pr_area(tp, count)
    return out


@dataclass(frozen=True)
class ApReport:
    per_category: dict[str, dict[str, float]]
    ap: float
    ap50: float
    ap75: float

    def to_dict(self) -> dict:
        return {"per_category": self.per_category, "AP": self.ap, "AP50": self.ap50, "AP75": self.ap75}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "ApReport":
        return cls(d["per_category"], d["AP"], d["AP50"], d["AP75"])

    def table(self) -> str:
        rows = ["| category | AP | AP50 | AP75 |", "|---|---|---|---|"]
        for cat, v in sorted(self.per_category.items()):
            rows.append(f"| {cat} | {100 * v['AP']:.1f} | {100 * v['AP50']:.1f} | {100 * v['AP75']:.1f} |")
        rows.append(f"| mean | {100 * self.ap:.1f} | {100 * self.ap50:.1f} | {100 * self.ap75:.1f} |")
        return "\n".join(rows)


def ap_mesh(records, n_gt: dict[str, int]) -> ApReport:
    """AP averaged over F1 thresholds 0.50:0.05:0.95, per category and class-averaged."""
    n_gt = {c: n for c, n in n_gt.items() if n > 0}
    per_thr = {t: average_precision(records, n_gt, t) for t in THRESHOLDS}
    per_cat = {}
    for cat in sorted(n_gt):
        vals = [per_thr[t][cat] for t in THRESHOLDS]
        per_cat[cat] = {"AP": float(np.mean(vals)), "AP50": per_thr[0.5][cat], "AP75": per_thr[0.75][cat]}
    if not per_cat:
        return ApReport({}, 0.0, 0.0, 0.0)

    def mean(key):
        return float(np.mean([v[key] for v in per_cat.values()]))

    return ApReport(per_cat, mean("AP"), mean("AP50"), mean("AP75"))

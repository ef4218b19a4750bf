"""End-to-end synthetic experiment: retrieve, estimate pose (and stretch), evaluate.

Scenes are independent; they run in a process pool and results are gathered
in scene order, so the output does not depend on the worker count.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..camera import CameraPose, Intrinsics
from ..metrics import ApReport, DetectionRecord, ap_mesh, confidence_from_score, f1_score, write_records
from ..mesh import TriMesh, bounding_box, sample_surface
from ..optimize import JointConfig, estimate_pose_and_shape
from ..pnp import matches_from_arrays
from ..retrieval import ViewIndex, build_view_database
from ..robust import AllCandidatesDegenerateError, TooFewMatchesError, estimate_pose, score_candidate
from ..silhouette import PointIndex, sample_mask
from ..stretch import StretchSpec, axis_planes, magnitude_stretch_spec, random_stretch_spec, stretch_mesh, tau_cap
from .scenes import SceneSpec, generate_scene, random_scene_pose, retrieval_matches
from .zoo import ZooModel, load_zoo

log = logging.getLogger(__name__)

DB_STRETCH_MODES = ("none", "random", "sweep")
ESTIMATORS = ("pnp", "joint")
SELECTION_METRICS = ("silhouette-q0.2", "silhouette-q1.0", "silhouette-q0.2-directional", "min-reprojection")
JOINT_INITS = ("view", "pnp")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    n_scenes: int = 24
    seed: int = 0
    db_stretch: str = "none"
    sweep_magnitude: float = 0.0
    top_n: int = 10
    estimator: str = "pnp"
    subset_size: int = 4
    selection: str = "silhouette-q0.2"
    fix_z: bool = False
    n_matches: int = 12
    inlier_min: int = 4
    inlier_max: int = 6
    pixel_noise_sigma: float = 0.0
    mask_noise_px: int = 0
    outlier_mode: str = "mask"
    subset_cap: int = 2000
    joint_init: str = "view"
    joint_max_iter: int = 500
    db_fraction: float = 1.0
    model_samples: int = 1000
    mask_samples: int = 1000
    f1_samples: int = 10000
    image_size: int = 256
    focal: float = 280.0

    def __post_init__(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.db_stretch in DB_STRETCH_MODES, f"db_stretch must be one of {DB_STRETCH_MODES}")
        need(self.estimator in ESTIMATORS, f"estimator must be one of {ESTIMATORS}")
        need(self.selection in SELECTION_METRICS, f"selection must be one of {SELECTION_METRICS}")
        need(self.joint_init in JOINT_INITS, f"joint_init must be one of {JOINT_INITS}")
        need(self.outlier_mode in ("mask", "image"), "outlier_mode must be 'mask' or 'image'")
        need(self.n_scenes >= 1, "n_scenes must be >= 1")
        need(self.top_n >= 1, "top_n must be >= 1")
        need(3 <= self.subset_size <= self.n_matches, "subset_size must lie in [3, n_matches]")
        need(self.estimator != "joint" or self.subset_size >= 6, "joint estimation needs subset_size >= 6")
        need(0 <= self.inlier_min <= self.inlier_max <= self.n_matches, "need 0 <= inlier_min <= inlier_max <= n_matches")
        need(0 < self.db_fraction <= 1, "db_fraction must lie in (0, 1]")
        need(self.sweep_magnitude >= 0, "sweep_magnitude must be >= 0")
        need(self.pixel_noise_sigma >= 0, "pixel_noise_sigma must be >= 0")
        need(self.subset_cap >= 1 and self.joint_max_iter >= 1, "caps must be positive")
        need(min(self.model_samples, self.mask_samples, self.f1_samples) >= 1, "sample counts must be positive")

    @property
    def q(self) -> float:
        return 1.0 if self.selection == "silhouette-q1.0" else 0.2

    @property
    def per_direction(self) -> bool:
        return self.selection == "silhouette-q0.2-directional"

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics.square(self.image_size, self.focal)

    def replace(self, **kw) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), **kw})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        clean = {}
        defaults = cls()
        for key, val in d.items():
            want = type(getattr(defaults, key))
            if want is bool:
                if not isinstance(val, bool):
                    raise ConfigError(f"{key} must be a boolean")
            elif want is int:
                if isinstance(val, bool) or not isinstance(val, int):
                    raise ConfigError(f"{key} must be an integer")
            elif want is float:
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    raise ConfigError(f"{key} must be a number")
                val = float(val)
            elif not isinstance(val, want):
                raise ConfigError(f"{key} must be a {want.__name__}")
            clean[key] = val
        return cls(**clean)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)


# --- database -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DbModel:
    model_id: str
    category: str
    mesh: TriMesh
    stretch: StretchSpec | None
    samples: np.ndarray


def _db_stretch(cfg: ExperimentConfig, mesh: TriMesh, mi: int) -> StretchSpec | None:
    seed = [cfg.seed, 2, mi]
    if cfg.db_stretch == "random":
        return random_stretch_spec(mesh, seed)
    if cfg.db_stretch == "sweep" and cfg.sweep_magnitude > 0:
        return magnitude_stretch_spec(mesh, cfg.sweep_magnitude, seed)
    return None


def build_db_models(cfg: ExperimentConfig, zoo: list[ZooModel]) -> list[DbModel]:
    """Database copies of the zoo, optionally stretched and subsampled by ``db_fraction``."""
    keep = len(zoo)
    order = list(range(len(zoo)))
    if cfg.db_fraction < 1:
        keep = max(1, math.ceil(cfg.db_fraction * len(zoo)))
        order = sorted(np.random.default_rng([cfg.seed, 5]).permutation(len(zoo))[:keep].tolist())
    out = []
    for mi in order:
        m = zoo[mi]
        spec = _db_stretch(cfg, m.mesh, mi)
        mesh = m.mesh if spec is None else stretch_mesh(m.mesh, spec)
        mesh = TriMesh(mesh.vertices, mesh.faces, m.model_id)
        pts = sample_surface(mesh, cfg.model_samples, np.random.default_rng([cfg.seed, 6, mi])).points
        out.append(DbModel(m.model_id, m.category, mesh, spec, pts))
    return out


_DB_CACHE: dict[tuple, tuple[list[DbModel], ViewIndex]] = {}
_DB_FIELDS = ("seed", "db_stretch", "sweep_magnitude", "db_fraction", "model_samples", "image_size", "focal")


def database_index(cfg: ExperimentConfig, zoo: list[ZooModel]) -> tuple[list[DbModel], ViewIndex]:
    """Database models and their view index, cached on the database-relevant config fields."""
    key = (tuple(getattr(cfg, f) for f in _DB_FIELDS),
           tuple((m.model_id, m.mesh.vertices.tobytes()) for m in zoo))
    if key not in _DB_CACHE:
        db = build_db_models(cfg, zoo)
        views = build_view_database([(d.model_id, d.mesh, d.category) for d in db], k=cfg.intrinsics,
                                    seed=cfg.seed)
        if len(_DB_CACHE) >= 2:
            _DB_CACHE.pop(next(iter(_DB_CACHE)))
        _DB_CACHE[key] = (db, ViewIndex(views))
    return _DB_CACHE[key]


# --- scenes ----------------------------------------------------------------------

def make_scene_specs(cfg: ExperimentConfig, zoo: list[ZooModel]) -> list[SceneSpec]:
    """Scene ``i`` shows zoo model ``i mod |zoo|`` under a seeded random pose."""
    k = cfg.intrinsics
    specs = []
    for i in range(cfg.n_scenes):
        rng = np.random.default_rng([cfg.seed, 1, i])
        m = zoo[i % len(zoo)]
        pose = random_scene_pose(m.mesh, k, rng)
        n_in = int(rng.integers(cfg.inlier_min, cfg.inlier_max + 1))
        specs.append(SceneSpec(f"scene_{i:04d}", m.model_id, pose, None, k, cfg.n_matches, n_in,
                               cfg.pixel_noise_sigma, int(rng.integers(2 ** 31)), cfg.mask_noise_px,
                               cfg.outlier_mode))
    return specs


# --- per-scene work --------------------------------------------------------------

_CTX: dict = {}


def _init_worker(cfg_dict: dict, zoo: list[ZooModel], db: list[DbModel]):
    _CTX.clear()
    _CTX["cfg"] = ExperimentConfig.from_dict(cfg_dict)
    _CTX["zoo"] = {m.model_id: m for m in zoo}
    _CTX["db"] = {d.model_id: d for d in db}


def _fix_depth(pose: CameraPose, center: np.ndarray, gt_depth: float) -> CameraPose:
    """Slide the object along the viewing ray through its center to the GT depth."""
    p = pose.rotation @ center + pose.t
    if p[2] <= 0:
        return pose
    return CameraPose(pose.theta, pose.t + (gt_depth / p[2] - 1.0) * p)


def _estimate(cfg, uv, xyz, d: DbModel, view_pose: CameraPose, mask_index, seed: int):
    k = cfg.intrinsics
    selection = "min-reprojection" if cfg.selection == "min-reprojection" else "silhouette"
    matches = matches_from_arrays(uv, xyz)
    if cfg.estimator == "pnp":
        return estimate_pose(matches, k, d.samples, mask_index, cfg.subset_size, cfg.q, cfg.subset_cap,
                             seed, cfg.per_direction, selection=selection), None
    planes = axis_planes(d.mesh)
    hs = estimate_pose_and_shape(matches, k, d.samples, mask_index, view_pose, planes, cfg.subset_size, cfg.q,
                                 cfg.subset_cap, seed, tau_cap(d.mesh, planes), cfg.joint_init,
                                 cfg.per_direction, cfg=JointConfig(max_iter=cfg.joint_max_iter), selection=selection)
    return hs, planes


def process_scene(index: int, spec: SceneSpec, retrievals: list[tuple[str, int, dict]]) -> dict:
    cfg: ExperimentConfig = _CTX["cfg"]
    gt_model: ZooModel = _CTX["zoo"][spec.model_id]
    scene = generate_scene(spec, gt_model.mesh)
    mask_index = PointIndex(sample_mask(scene.mask, cfg.mask_samples, np.random.default_rng([spec.seed, 3])))
    out = {"scene_id": spec.scene_id, "gt_model": spec.model_id, "gt_category": gt_model.category,
           "retrievals": [[m, v] for m, v, _ in retrievals], "n_inliers": spec.inlier_count}
    best = None
    errors = []
    for r, (model_id, view_index, pose_dict) in enumerate(retrievals):
        d: DbModel = _CTX["db"][model_id]
        rng = np.random.default_rng([spec.seed, 4, r])
        uv, xyz = retrieval_matches(scene, model_id == spec.model_id, d.mesh, d.stretch, rng)
        try:
            hs, planes = _estimate(cfg, uv, xyz, d, CameraPose.from_dict(pose_dict), mask_index, spec.seed + r)
        except (TooFewMatchesError, AllCandidatesDegenerateError) as exc:
            errors.append(f"retrieval {r}: {exc}")
            continue
        win = hs.winner
        if win is None:
            errors.append(f"retrieval {r}: every candidate scored infinite")
            continue
        key = win.rms_all if cfg.selection == "min-reprojection" else win.score_value
        if best is None or key < best[0]:
            best = (key, r, win, planes, d)
    if best is None:
        out["failure"] = "; ".join(errors) or "no retrievals"
        return out
    _, r, win, planes, d = best
    pose = win.pose
    spec_pred = StretchSpec(planes, win.tau) if planes is not None else None
    score = win.score_value
    if win.score is None:
        score = score_candidate(d.samples, pose, cfg.intrinsics, mask_index, 0.2, False, spec_pred).value
    if cfg.fix_z:
        c_pred = bounding_box(d.mesh).center
        c_gt = bounding_box(gt_model.mesh).center
        gt_depth = float((spec.gt_pose.rotation @ c_gt + spec.gt_pose.t)[2])
        pose = _fix_depth(pose, c_pred, gt_depth)
    f1 = f1_score(d.mesh, pose, gt_model.mesh, spec.gt_pose, n_samples=cfg.f1_samples, seed=spec.seed,
                  pred_stretch=spec_pred)
    out.update({"winner_retrieval": r, "pred_model": d.model_id, "pred_category": d.category,
                "pose": pose.to_dict(), "tau": None if win.tau is None else np.asarray(win.tau).tolist(),
                "score": score if math.isfinite(score) else None, "rms_all": win.rms_all,
                "confidence": confidence_from_score(score), "f1": f1.f1, "precision": f1.precision,
                "recall": f1.recall})
    return out


# --- driver ------------------------------------------------------------------------

@dataclass
class PipelineResult:
    config: ExperimentConfig
    report: ApReport
    records: list[DetectionRecord]
    scenes: list[dict]
    n_gt: dict[str, int]

    @property
    def failure_rate(self) -> float:
        return sum("failure" in s for s in self.scenes) / max(len(self.scenes), 1)

    @property
    def mean_f1(self) -> float:
        """Mean F1 over scenes, failures counting as 0."""
        return float(np.mean([s.get("f1", 0.0) for s in self.scenes]))

    def write(self, out_dir: str | Path) -> None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "config.json").write_text(json.dumps(self.config.to_dict(), indent=1, sort_keys=True) + "\n")
        (d / "ap_report.json").write_text(self.report.to_json() + "\n")
        (d / "report.md").write_text(self.report.table() + "\n")
        (d / "gt.json").write_text(json.dumps(self.n_gt, indent=1, sort_keys=True) + "\n")
        write_records(self.records, d / "records.jsonl")
        with open(d / "scenes.jsonl", "w") as fh:
            for s in self.scenes:
                fh.write(json.dumps(s, sort_keys=True) + "\n")


def retrieve_for_scenes(cfg: ExperimentConfig, specs: list[SceneSpec], zoo: list[ZooModel],
                        index: ViewIndex) -> list[list[tuple[str, int, dict]]]:
    by_id = {m.model_id: m for m in zoo}
    out = []
    for spec in specs:
        scene = generate_scene(spec, by_id[spec.model_id].mesh)
        ranked = index.rank(scene.mask)[:cfg.top_n]
        out.append([(index.views[i].model_id, index.views[i].view_index, index.views[i].pose.to_dict())
                    for i in ranked])
    return out


def run_pipeline(cfg: ExperimentConfig, zoo: list[ZooModel] | None = None,
                 specs: list[SceneSpec] | None = None, jobs: int = 1) -> PipelineResult:
    """Run every scene through retrieval, estimation and F1 evaluation; aggregate AP.

    A scene with no usable hypothesis is logged as a failure (a missed GT) and
    does not stop the run.
    """
    zoo = zoo if zoo is not None else load_zoo()
    if not zoo:
        raise ConfigError("empty model zoo")
    specs = specs if specs is not None else make_scene_specs(cfg, zoo)
    if not specs:
        raise ConfigError("no scenes")
    db, index = database_index(cfg, zoo)
    retrievals = retrieve_for_scenes(cfg, specs, zoo, index)
    args = (cfg.to_dict(), zoo, db)
    if jobs <= 1:
        _init_worker(*args)
        scenes = [process_scene(i, s, r) for i, (s, r) in enumerate(zip(specs, retrievals))]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=args) as pool:
            scenes = list(pool.map(process_scene, range(len(specs)), specs, retrievals))
    categories = {m.model_id: m.category for m in zoo}
    n_gt: dict[str, int] = {}
    records = []
    for spec, s in zip(specs, scenes):
        cat = categories[spec.model_id]
        n_gt[cat] = n_gt.get(cat, 0) + 1
        if "failure" in s:
            log.warning("%s failed: %s", s["scene_id"], s["failure"])
            continue
        records.append(DetectionRecord(s["scene_id"], s["pred_category"], s["confidence"], s["f1"],
                                       s["scene_id"], cat))
    return PipelineResult(cfg, ap_mesh(records, n_gt), records, scenes, n_gt)

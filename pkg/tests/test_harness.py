import json

import numpy as np
import pytest

from cadstretch.camera import project_points
from cadstretch.harness.ablation import ABLATIONS, AblationTable, ablation_settings
from cadstretch.harness.cli import main
from cadstretch.harness.pipeline import ConfigError, ExperimentConfig, make_scene_specs, run_pipeline
from cadstretch.harness.scenes import SceneSpec, generate_scene, perturb_mask, random_scene_pose
from cadstretch.harness.zoo import CATEGORIES, generate_zoo
from cadstretch.pnp import stack_matches
from cadstretch.silhouette import Mask

TINY = {"n_scenes": 3, "top_n": 1, "subset_cap": 50, "f1_samples": 2000}


def test_bundled_zoo_matches_generator(zoo):
    fresh = generate_zoo()
    assert [m.model_id for m in zoo] == [m.model_id for m in fresh]
    assert sorted({m.category for m in zoo}) == sorted(CATEGORIES)
    for a, b in zip(zoo, fresh):
        assert np.allclose(a.mesh.vertices, b.mesh.vertices, atol=1e-9)
        assert a.mesh.vertices[:, 1].min() == pytest.approx(0.0)


def test_scene_inliers_reproject(zoo, k):
    m = zoo[3]
    pose = random_scene_pose(m.mesh, k, np.random.default_rng(0))
    scene = generate_scene(SceneSpec("s", m.model_id, pose, None, k, 12, 5, 0.0, 1), m.mesh)
    uv, xyz, _ = stack_matches(scene.matches)
    assert len(uv) == 12 and scene.is_inlier.sum() == 5
    proj, ok = project_points(xyz[scene.is_inlier], pose, k)
    assert ok.all() and np.abs(proj - uv[scene.is_inlier]).max() < 1e-9
    # outliers lie on the mask
    out = np.rint(uv[~scene.is_inlier]).astype(int)
    assert scene.mask.grid[out[:, 1], out[:, 0]].all()


def test_scene_is_deterministic(zoo, k):
    m = zoo[0]
    pose = random_scene_pose(m.mesh, k, np.random.default_rng(0))
    spec = SceneSpec("s", m.model_id, pose, None, k, seed=4)
    a, b = generate_scene(spec, m.mesh), generate_scene(spec, m.mesh)
    assert a.mask == b.mask and np.array_equal(stack_matches(a.matches)[0], stack_matches(b.matches)[0])
    assert SceneSpec.from_dict(json.loads(json.dumps(spec.to_dict()))).to_dict() == spec.to_dict()


def raster_mesh(mesh, pose, k):
    """Pixels whose centers fall inside a projected triangle."""
    uv, _ = project_points(mesh.vertices, pose, k)
    yy, xx = np.mgrid[0:k.height, 0:k.width]
    grid = np.zeros((k.height, k.width), bool)
    for f in mesh.faces:
        a, b, c = uv[f]
        lo = np.clip(np.floor(np.min([a, b, c], axis=0)).astype(int), 0, [k.width - 1, k.height - 1])
        hi = np.clip(np.ceil(np.max([a, b, c], axis=0)).astype(int), 0, [k.width - 1, k.height - 1])
        px, py = xx[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1], yy[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1]
        e = [(q[0] - p[0]) * (py - p[1]) - (q[1] - p[1]) * (px - p[0]) for p, q in ((a, b), (b, c), (c, a))]
        inside = ((e[0] >= 0) & (e[1] >= 0) & (e[2] >= 0)) | ((e[0] <= 0) & (e[1] <= 0) & (e[2] <= 0))
        grid[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1] |= inside
    return Mask(grid)


def test_scene_mask_matches_rasterized_silhouette(zoo, k):
    ious = []
    for i, m in enumerate(zoo):
        pose = random_scene_pose(m.mesh, k, np.random.default_rng(i))
        scene = generate_scene(SceneSpec("s", m.model_id, pose, None, k, seed=i), m.mesh)
        ious.append(scene.mask.iou(raster_mesh(m.mesh, pose, k)))
    # thin one-pixel bars cap the worst case slightly below the mean
    assert np.mean(ious) > 0.9 and min(ious) > 0.85


def test_perturb_mask(zoo, k):
    m = zoo[5]
    pose = random_scene_pose(m.mesh, k, np.random.default_rng(2))
    mask = generate_scene(SceneSpec("s", m.model_id, pose, None, k, seed=2), m.mesh).mask
    assert perturb_mask(mask, 2).area > mask.area > perturb_mask(mask, -1).area


def test_scene_spec_validation(zoo, k):
    pose = random_scene_pose(zoo[0].mesh, k, np.random.default_rng(0))
    with pytest.raises(ValueError):
        SceneSpec("s", "chair_0", pose, None, k, 4, 5)


@pytest.mark.parametrize("bad", [{"n_scenes": 0}, {"estimator": "joint", "subset_size": 4},
                                 {"selection": "best"}, {"top_n": "3"}, {"fix_z": 1}, {"nope": 1},
                                 {"inlier_min": 7, "inlier_max": 6}, {"db_fraction": 0.0}])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(n_scenes=5, sweep_magnitude=0.2, db_stretch="sweep")
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.from_json_file(p) == cfg
    assert ExperimentConfig.from_dict({"pixel_noise_sigma": 1}).pixel_noise_sigma == 1.0


def test_scene_specs_cycle_models(zoo):
    specs = make_scene_specs(ExperimentConfig(n_scenes=14), zoo)
    assert [s.model_id for s in specs[:12]] == [m.model_id for m in zoo]
    assert all(4 <= s.inlier_count <= 6 for s in specs)


def test_pipeline_small_run(zoo, tmp_path):
    res = run_pipeline(ExperimentConfig.from_dict(TINY), zoo)
    assert len(res.scenes) == 3 and sum(res.n_gt.values()) == 3
    assert 0 <= res.report.ap <= 1 and 0 <= res.mean_f1 <= 1
    res.write(tmp_path)
    for name in ("config.json", "ap_report.json", "report.md", "gt.json", "records.jsonl", "scenes.jsonl"):
        assert (tmp_path / name).exists()


def test_ablation_settings():
    cfg = ExperimentConfig()
    for name in ABLATIONS:
        assert len(ablation_settings(name, cfg)) >= 3
    labels = [c.estimator for _, c in ablation_settings("match-count", cfg.replace(estimator="joint", subset_size=6))]
    assert labels == ["pnp", "pnp", "pnp", "joint", "joint"]
    with pytest.raises(ConfigError):
        ablation_settings("bogus", cfg)


def test_ablation_table_formats(tmp_path):
    t = AblationTable("top-n", [{"setting": "1", "AP": 0.5, "AP50": 0.6, "AP75": 0.4, "mean_f1": 0.7,
                                 "failure_rate": 0.0}])
    t.write(tmp_path)
    assert (tmp_path / "ablation_top-n.csv").read_text().splitlines()[1] == "1,0.500000,0.600000,0.400000,0.700000,0.000000"
    assert "| 1 | 50.0 |" in t.to_markdown()


def test_cli_pipeline_and_evaluate(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    out = tmp_path / "run"
    assert main(["pipeline", "--config", str(cfg), "--out-dir", str(out), "--seed", "1"]) == 0
    assert json.loads((out / "config.json").read_text())["seed"] == 1
    assert main(["evaluate", "--records", str(out / "records.jsonl"), "--gt", str(out / "gt.json"),
                 "--out-dir", str(tmp_path / "ev")]) == 0
    assert (tmp_path / "ev" / "ap_report.json").read_text() == (out / "ap_report.json").read_text()


def test_cli_config_errors(tmp_path, capsys):
    assert main(["pipeline", "--set", "bogus=1", "--out-dir", str(tmp_path)]) == 2
    assert main(["pipeline", "--config", str(tmp_path / "missing.json"), "--out-dir", str(tmp_path)]) == 2
    assert main(["pipeline", "--jobs", "0", "--out-dir", str(tmp_path)]) == 2
    assert main(["evaluate", "--records", str(tmp_path / "none.jsonl"), "--gt", str(tmp_path / "none.json")]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_synth_then_estimate(tmp_path, capsys):
    out = tmp_path / "synth"
    assert main(["synth", "--set", "n_scenes=1", "--out-dir", str(out)]) == 0
    gt = json.loads((out / "scenes" / "scene_0000_gt.json").read_text())
    capsys.readouterr()
    rc = main(["estimate", "--mesh", str(out / "zoo" / f"{gt['model_id']}.obj"),
               "--mask", str(out / "scenes" / "scene_0000_mask.pbm"),
               "--matches", str(out / "scenes" / "scene_0000_matches.csv"), "--out-dir", str(tmp_path / "est")])
    assert rc == 0
    est = json.loads((tmp_path / "est" / "estimate.json").read_text())
    assert not est["failed"] and len(est["subset"]) == 4


def test_cli_estimate_too_few_matches(tmp_path, zoo, capsys):
    from cadstretch.mesh import save_mesh
    from cadstretch.silhouette import Mask, write_pbm
    save_mesh(zoo[0].mesh, tmp_path / "m.obj")
    write_pbm(Mask(np.ones((8, 8), bool)), tmp_path / "m.pbm")
    (tmp_path / "m.csv").write_text("u_px,v_px,x,y,z\n1,2,0,0,0\n")
    assert main(["estimate", "--mesh", str(tmp_path / "m.obj"), "--mask", str(tmp_path / "m.pbm"),
                 "--matches", str(tmp_path / "m.csv")]) == 3


def test_closed_loop_ceiling(zoo):
    cfg = ExperimentConfig(n_scenes=12, top_n=3, inlier_min=12, inlier_max=12, subset_cap=30)
    res = run_pipeline(cfg, zoo)
    assert res.report.ap > 0.95


def test_per_direction_selection_runs(zoo):
    cfg = ExperimentConfig.from_dict({**TINY, "selection": "silhouette-q0.2-directional"})
    assert cfg.per_direction and cfg.q == 0.2
    assert len(run_pipeline(cfg, zoo).scenes) == 3

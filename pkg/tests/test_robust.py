import math

import numpy as np
import pytest

from cadstretch.camera import project_points, rotation_angle_between
from cadstretch.harness.scenes import SceneSpec, generate_scene, random_scene_pose
from cadstretch.mesh import sample_surface
from cadstretch.pnp import matches_from_arrays
from cadstretch.robust import (AllCandidatesDegenerateError, Candidate, TooFewMatchesError, enumerate_subsets,
                               estimate_pose, select_by_min_reprojection, select_by_silhouette)
from cadstretch.silhouette import SilhouetteScore, sample_mask


@pytest.mark.parametrize("n,k_,count", [(12, 4, 495), (12, 6, 924), (4, 4, 1)])
def test_subset_counts(n, k_, count):
    subs = enumerate_subsets(n, k_)
    assert len(subs) == count == len(set(subs))
    assert subs == sorted(subs)
    assert all(len(set(s)) == k_ for s in subs)


def test_capped_subsets_distinct_and_seeded():
    subs = enumerate_subsets(30, 6, cap=2000, seed=3)
    assert len(subs) == 2000 == len(set(subs)) and subs == sorted(subs)
    assert subs == enumerate_subsets(30, 6, cap=2000, seed=3)
    assert subs != enumerate_subsets(30, 6, cap=2000, seed=4)


def test_subset_errors():
    with pytest.raises(ValueError):
        enumerate_subsets(3, 4)


def cand(score):
    return Candidate((0,), None, None if score is None else SilhouetteScore(score, 1, 1, 0.2))


def test_selection_ties_and_invalid():
    assert select_by_silhouette([cand(2.0), cand(1.0), cand(1.0)]) == 1
    assert select_by_silhouette([cand(math.inf), cand(None)]) is None
    cs = [cand(1.0), cand(1.0)]
    cs[0].rms_all, cs[1].rms_all = 3.0, 3.0
    assert select_by_min_reprojection(cs) == 0


def test_too_few_matches(k):
    with pytest.raises(TooFewMatchesError):
        estimate_pose(matches_from_arrays(np.zeros((3, 2)), np.zeros((3, 3))), k, np.zeros((5, 3)), np.zeros((5, 2)))


def test_all_collinear_raises(k):
    xyz = np.array([[i, i, i] for i in range(5)], float)
    uv = np.column_stack([np.arange(5) * 10.0 + 50, np.arange(5) * 10.0 + 50])
    with pytest.raises(AllCandidatesDegenerateError):
        estimate_pose(matches_from_arrays(uv, xyz), k, xyz, uv)


def test_recovers_pose_with_outliers(zoo, k):
    hits = 0
    trials = 10
    for i in range(trials):
        m = zoo[i % len(zoo)]
        pose = random_scene_pose(m.mesh, k, np.random.default_rng([7, i]))
        scene = generate_scene(SceneSpec(f"s{i}", m.model_id, pose, None, k, 12, 5, 0.0, i), m.mesh)
        hs = estimate_pose(scene.matches, k, sample_surface(m.mesh, 1000, i), sample_mask(scene.mask, 1000, i))
        if rotation_angle_between(hs.winner.pose.rotation, pose.rotation) < math.radians(5):
            hits += 1
    assert hits >= 8


def test_min_reprojection_mode_skips_scores(zoo, k):
    m = zoo[0]
    pose = random_scene_pose(m.mesh, k, np.random.default_rng(1))
    pts = sample_surface(m.mesh, 8, 0).points
    uv, _ = project_points(pts, pose, k)
    hs = estimate_pose(matches_from_arrays(uv, pts), k, pts, uv, selection="min-reprojection")
    assert all(c.score is None for c in hs.candidates)
    assert rotation_angle_between(hs.winner.pose.rotation, pose.rotation) < 1e-6
    with pytest.raises(ValueError):
        estimate_pose(matches_from_arrays(uv, pts), k, pts, uv, selection="bogus")

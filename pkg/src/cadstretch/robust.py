"""Hypothesis generation over match subsets and silhouette-based selection."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .camera import Intrinsics, project_points
from .mesh import SurfaceSample
from .pnp import PnpSolution, pnp_candidates, reprojection_rms_arrays, stack_matches
from .silhouette import PointIndex, SilhouetteScore, score_projected
from .stretch import StretchSpec, stretch_points


SELECTIONS = ("silhouette", "min-reprojection")


class TooFewMatchesError(ValueError):
    pass


class AllCandidatesDegenerateError(RuntimeError):
    pass


def _unrank_combination(rank: int, n: int, k: int) -> tuple[int, ...]:
    """Lexicographic unranking of a k-subset of range(n)."""
    out = []
    x = 0
    for i in range(k, 0, -1):
        while True:
            c = math.comb(n - x - 1, i - 1)
            if rank < c:
                break
            rank -= c
            x += 1
        out.append(x)
        x += 1
    return tuple(out)


def enumerate_subsets(n: int, k: int, cap: int = 2000, seed: int = 0) -> list[tuple[int, ...]]:
    """All k-subsets of range(n) in lexicographic order, or ``cap`` of them
    drawn uniformly without replacement (still returned in lexicographic order)."""
    if k > n:
        raise ValueError(f"subset size {k} exceeds match count {n}")
    if k < 1 or cap < 1:
        raise ValueError("k and cap must be positive")
    total = math.comb(n, k)
    if total <= cap:
        return list(itertools.combinations(range(n), k))
    rng = np.random.default_rng(seed)
    if total < 2 ** 62:
        ranks = np.sort(rng.choice(total, size=cap, replace=False))
    else:
        chosen: set[int] = set()
        while len(chosen) < cap:
            chosen.add(int(rng.integers(0, 2 ** 62)) % total)
        ranks = sorted(chosen)
    return [_unrank_combination(int(r), n, k) for r in ranks]


@dataclass
class Candidate:
    subset: tuple[int, ...]
    solution: Union[PnpSolution, "JointSolution"]  # noqa: F821
    score: SilhouetteScore | None
    rms_all: float = float("nan")

    @property
    def score_value(self) -> float:
        return math.inf if self.score is None else self.score.value

    @property
    def pose(self):
        return self.solution.pose

    @property
    def tau(self) -> np.ndarray | None:
        return getattr(self.solution, "tau", None)

    def to_dict(self) -> dict:
        d = {"subset": list(self.subset), "pose": self.pose.to_dict(),
             "score": self.score_value if math.isfinite(self.score_value) else None,
             "rms_all": self.rms_all}
        if self.tau is not None:
            d["tau"] = np.asarray(self.tau).tolist()
        return d


@dataclass
class HypothesisSet:
    candidates: list[Candidate] = field(default_factory=list)
    selected: int | None = None
    n_degenerate: int = 0

    @property
    def failed(self) -> bool:
        return self.selected is None

    @property
    def winner(self) -> Candidate | None:
        return None if self.selected is None else self.candidates[self.selected]

    def to_json(self) -> str:
        return json.dumps({"selected": self.selected, "n_degenerate": self.n_degenerate,
                           "candidates": [c.to_dict() for c in self.candidates]})


def select_by_silhouette(candidates: list[Candidate]) -> int | None:
    """Index of the minimal finite score; ties go to the lowest index."""
    best, best_val = None, math.inf
    for i, c in enumerate(candidates):
        if c.score_value < best_val:
            best, best_val = i, c.score_value
    return best


def select_by_min_reprojection(candidates: list[Candidate], matches=None, k: Intrinsics | None = None) -> int:
    """Index of the candidate with minimal RMS reprojection over all matches.

    Uses each candidate's cached ``rms_all`` unless ``matches`` and ``k`` are
    given. Ties go to the lowest index.
    """
    if not candidates:
        raise ValueError("no candidates")
    if matches is not None:
        uv, xyz, _ = stack_matches(matches)
        for c in candidates:
            c.rms_all = _rms_all(c, uv, xyz, k)
    vals = [c.rms_all for c in candidates]
    return int(np.argmin(vals))


def _rms_all(c: Candidate, uv, xyz, k, planes=None) -> float:
    pts = xyz
    if c.tau is not None and planes:
        pts = stretch_points(xyz, StretchSpec(tuple(planes), c.tau))
    return reprojection_rms_arrays(uv, pts, c.pose.rotation, c.pose.t, k)


def score_candidate(model_points: np.ndarray, pose, k: Intrinsics, mask_index: PointIndex,
                    q: float, per_direction: bool = False, spec: StretchSpec | None = None) -> SilhouetteScore:
    pts = model_points if spec is None else stretch_points(model_points, spec)
    uv, valid = project_points(pts, pose, k)
    return score_projected(uv, valid, mask_index, q, per_direction)


def _as_index(mask_points) -> PointIndex:
    return mask_points if isinstance(mask_points, PointIndex) else PointIndex(mask_points)


def _check_selection(selection: str):
    if selection not in SELECTIONS:
        raise ValueError(f"unknown selection {selection!r}")


def _select(hs: "HypothesisSet", selection: str) -> None:
    if selection == "silhouette":
        hs.selected = select_by_silhouette(hs.candidates)
    else:
        hs.selected = select_by_min_reprojection(hs.candidates)


def estimate_pose(matches, k_intrinsics: Intrinsics, mesh_samples: SurfaceSample | np.ndarray,
                  mask_points, subset_size: int = 4, q: float = 0.2, cap: int = 2000,
                  seed: int = 0, per_direction: bool = False,
                  selection: str = "silhouette") -> HypothesisSet:
    """PnP candidates for every match subset, ranked by silhouette score.

    Degenerate subsets are skipped. Raises :class:`TooFewMatchesError` and
    :class:`AllCandidatesDegenerateError`. If every candidate scores infinite
    the returned set has ``selected=None``. ``selection='min-reprojection'``
    skips silhouette scoring and picks the lowest RMS over all matches.
    """
    _check_selection(selection)
    uv, xyz, _ = stack_matches(matches)
    if len(uv) < subset_size:
        raise TooFewMatchesError(f"need {subset_size} matches, got {len(uv)}")
    model_pts = mesh_samples.points if isinstance(mesh_samples, SurfaceSample) else np.asarray(mesh_samples)
    mask_index = _as_index(mask_points) if selection == "silhouette" else None
    hs = HypothesisSet()
    for subset in enumerate_subsets(len(uv), subset_size, cap, seed):
        idx = list(subset)
        sols = pnp_candidates(uv[idx], xyz[idx], k_intrinsics)
        if not sols:
            hs.n_degenerate += 1
            continue
        for sol in sols:
            score = None
            if mask_index is not None:
                score = score_candidate(model_pts, sol.pose, k_intrinsics, mask_index, q, per_direction)
            rms = reprojection_rms_arrays(uv, xyz, sol.pose.rotation, sol.pose.t, k_intrinsics)
            hs.candidates.append(Candidate(subset, sol, score, rms))
    if not hs.candidates:
        raise AllCandidatesDegenerateError("every match subset was degenerate")
    _select(hs, selection)
    return hs

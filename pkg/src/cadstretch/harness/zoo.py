"""Procedural furniture zoo built from boxes.

Models live in a y-up frame resting on y = 0, in metres. Every model carries
a back panel, an off-centre shelf or a one-sided feature so that no rotation
about the vertical axis maps it onto itself; otherwise two grid views could
share a silhouette exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..mesh import TriMesh, box_mesh, load_mesh, merge_meshes, save_mesh

CATEGORIES = ("chair", "table", "bookcase", "sofa")
DEFAULT_ZOO_DIR = Path(__file__).resolve().parent.parent / "data" / "zoo"
ZOO_SEED = 2021


@dataclass(frozen=True, eq=False)
class ZooModel:
    model_id: str
    category: str
    mesh: TriMesh


def _box(x0, x1, y0, y1, z0, z1):
    return box_mesh((x0, y0, z0), (x1, y1, z1))


def _legs(w, d, h, t, inset=0.0):
    out = []
    for sx in (-1, 1):
        for sz in (-1, 1):
            cx = sx * (w / 2 - inset - t / 2)
            cz = sz * (d / 2 - inset - t / 2)
            out.append(_box(cx - t / 2, cx + t / 2, 0, h, cz - t / 2, cz + t / 2))
    return out


def chair(rng, style: int) -> list[TriMesh]:
    j = lambda v: v * rng.uniform(0.9, 1.1)  # noqa: E731
    w, d, hs, hb, t = j(0.45), j(0.45), j(0.45), j(0.45), 0.04
    if style == 2:  # bar chair
        hs, hb = j(0.75), j(0.25)
    parts = _legs(w, d, hs - 0.05, t)
    parts.append(_box(-w / 2, w / 2, hs - 0.05, hs, -d / 2, d / 2))
    parts.append(_box(-w / 2, w / 2, hs, hs + hb, -d / 2, -d / 2 + 0.05))
    if style == 1:  # armchair
        for sx in (-1, 1):
            x0 = sx * w / 2
            parts.append(_box(min(x0, x0 + sx * 0.05), max(x0, x0 + sx * 0.05), hs, hs + 0.22, -d / 2, d / 2 - 0.05))
    if style == 2:  # footrest bar on the front legs
        parts.append(_box(-w / 2, w / 2, 0.25, 0.28, d / 2 - t, d / 2))
    return parts


def table(rng, style: int) -> list[TriMesh]:
    j = lambda v: v * rng.uniform(0.9, 1.1)  # noqa: E731
    t = 0.05
    if style == 0:  # dining table with an off-centre lower shelf
        w, d, h = j(1.4), j(0.8), j(0.75)
        parts = _legs(w, d, h - 0.04, t)
        parts.append(_box(-w / 2 + t, w / 6, 0.15, 0.18, -d / 2 + t, d / 2 - t))
    elif style == 1:  # desk: pedestal on one side, two legs on the other
        w, d, h = j(1.2), j(0.6), j(0.74)
        parts = [_box(-w / 2, -w / 2 + t, 0, h - 0.04, -d / 2, -d / 2 + t),
                 _box(-w / 2, -w / 2 + t, 0, h - 0.04, d / 2 - t, d / 2),
                 _box(w / 2 - 0.4, w / 2, 0, h - 0.04, -d / 2, d / 2),
                 _box(-w / 2, w / 2, h - 0.34, h - 0.04, -d / 2, -d / 2 + 0.02)]
    else:  # coffee table with a drawer block
        w, d, h = j(1.1), j(0.55), j(0.42)
        parts = _legs(w, d, h - 0.04, t)
        parts.append(_box(0.0, w / 2 - t, h - 0.16, h - 0.04, -d / 2 + t, d / 2 - t))
    parts.append(_box(-w / 2, w / 2, h - 0.04, h, -d / 2, d / 2))
    return parts


def bookcase(rng, style: int) -> list[TriMesh]:
    j = lambda v: v * rng.uniform(0.9, 1.1)  # noqa: E731
    t = 0.03
    w, d, h, n_shelves = [(j(0.8), j(0.3), j(1.8), 4), (j(1.4), j(0.35), j(0.9), 2),
                          (j(0.6), j(0.3), j(1.2), 3)][style]
    parts = [_box(-w / 2, -w / 2 + t, 0, h, -d / 2, d / 2), _box(w / 2 - t, w / 2, 0, h, -d / 2, d / 2),
             _box(-w / 2, w / 2, h - t, h, -d / 2, d / 2), _box(-w / 2, w / 2, 0, 0.08, -d / 2, d / 2),
             _box(-w / 2, w / 2, 0, h, -d / 2, -d / 2 + 0.01)]
    for i in range(1, n_shelves):
        y = h * i / n_shelves
        parts.append(_box(-w / 2, w / 2, y - t / 2, y + t / 2, -d / 2, d / 2))
    if style == 1:  # off-centre divider
        parts.append(_box(w / 6 - t / 2, w / 6 + t / 2, 0, h, -d / 2, d / 2))
    if style == 2:  # crown on top, set back
        parts.append(_box(-w / 2, w / 2, h, h + 0.12, -d / 2, 0.0))
    return parts


def sofa(rng, style: int) -> list[TriMesh]:
    j = lambda v: v * rng.uniform(0.9, 1.1)  # noqa: E731
    w, d, hs, hb, arm = j(2.0), j(0.9), j(0.42), j(0.4), 0.18
    if style == 1:
        w = j(1.4)  # loveseat
    parts = [_box(-w / 2, w / 2, 0.08, hs, -d / 2, d / 2),
             _box(-w / 2, w / 2, hs, hs + hb, -d / 2, -d / 2 + 0.2)]
    parts += [_box(-w / 2 + 0.05, -w / 2 + 0.1, 0, 0.08, -d / 2 + 0.05, d / 2 - 0.05),
              _box(w / 2 - 0.1, w / 2 - 0.05, 0, 0.08, -d / 2 + 0.05, d / 2 - 0.05)]
    arms = (-1, 1) if style != 2 else (-1,)
    for sx in arms:
        x0 = sx * w / 2
        parts.append(_box(min(x0, x0 - sx * arm), max(x0, x0 - sx * arm), hs, hs + 0.2, -d / 2, d / 2))
    if style == 2:  # chaise extension on the armless side
        parts.append(_box(w / 2 - 0.7, w / 2, 0.08, hs, d / 2, d / 2 + 0.7))
    return parts


_BUILDERS = {"chair": chair, "table": table, "bookcase": bookcase, "sofa": sofa}


def generate_zoo(seed: int = ZOO_SEED) -> list[ZooModel]:
    """Twelve models, three styles per category, with seeded proportions."""
    out = []
    for ci, cat in enumerate(CATEGORIES):
        for style in range(3):
            rng = np.random.default_rng([seed, ci, style])
            model_id = f"{cat}_{style}"
            mesh = merge_meshes(_BUILDERS[cat](rng, style), model_id)
            out.append(ZooModel(model_id, cat, mesh))
    return out


def write_zoo(models: list[ZooModel], directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    index = []
    for m in models:
        save_mesh(m.mesh, d / f"{m.model_id}.obj")
        index.append({"model_id": m.model_id, "category": m.category, "file": f"{m.model_id}.obj"})
    (d / "zoo.json").write_text(json.dumps(index, indent=1) + "\n")


def load_zoo(directory: str | Path | None = None) -> list[ZooModel]:
    d = Path(directory) if directory is not None else DEFAULT_ZOO_DIR
    index = json.loads((d / "zoo.json").read_text())
    out = []
    for e in index:
        mesh = load_mesh(d / e["file"])
        out.append(ZooModel(e["model_id"], e["category"], TriMesh(mesh.vertices, mesh.faces, e["model_id"])))
    return out

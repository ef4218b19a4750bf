"""Command line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 when more than half
of the scenes fail.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..camera import CameraPose, Intrinsics
from ..mesh import MeshError, load_mesh, sample_surface
from ..metrics import ap_mesh, read_records
from ..optimize import estimate_pose_and_shape
from ..pnp import read_matches_csv, solve_pnp
from ..retrieval import save_view_database
from ..robust import AllCandidatesDegenerateError, TooFewMatchesError, estimate_pose
from ..silhouette import EmptyMaskError, PointIndex, read_pbm, sample_mask
from ..stretch import axis_planes, tau_cap
from .ablation import ABLATIONS, run_ablation
from .pipeline import ConfigError, ExperimentConfig, database_index, make_scene_specs, run_pipeline
from .scenes import generate_scene, save_scene
from .zoo import load_zoo, write_zoo

EXIT_OK, EXIT_CONFIG, EXIT_FAILURES = 0, 2, 3
log = logging.getLogger("cadstretch")


def _parse_overrides(items: list[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def load_config(args) -> ExperimentConfig:
    base = ExperimentConfig.from_json_file(args.config).to_dict() if args.config else {}
    base.update(_parse_overrides(args.set or []))
    if args.seed is not None:
        base["seed"] = args.seed
    return ExperimentConfig.from_dict(base)


def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_synth(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    zoo = load_zoo(args.zoo)
    write_zoo(zoo, out / "zoo")
    _, index = database_index(cfg, zoo)
    save_view_database(index.views, out / "views")
    cats = {m.model_id: m.category for m in zoo}
    meshes = {m.model_id: m.mesh for m in zoo}
    for spec in make_scene_specs(cfg, zoo):
        save_scene(generate_scene(spec, meshes[spec.model_id]), out / "scenes", cats[spec.model_id])
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(zoo)} models, {len(index)} views and {cfg.n_scenes} scenes to {out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    k = Intrinsics.from_dict(json.loads(Path(args.intrinsics).read_text())) if args.intrinsics else Intrinsics.square()
    mesh = load_mesh(args.mesh)
    mask = read_pbm(args.mask)
    matches = read_matches_csv(args.matches)
    samples = sample_surface(mesh, args.model_samples, args.seed or 0)
    mask_pts = PointIndex(sample_mask(mask, args.mask_samples, args.seed or 0))
    if args.mode == "pnp":
        hs = estimate_pose(matches, k, samples, mask_pts, args.subset_size, args.q, seed=args.seed or 0)
        planes = None
    else:
        planes = axis_planes(mesh)
        if args.init_pose:
            init = CameraPose.from_dict(json.loads(Path(args.init_pose).read_text()))
        else:
            sol = solve_pnp(matches, k)
            if sol is None:
                raise AllCandidatesDegenerateError("no initial pose: PnP on all matches failed")
            init = sol.pose
        hs = estimate_pose_and_shape(matches, k, samples, mask_pts, init, planes, max(args.subset_size, 6),
                                     args.q, seed=args.seed or 0, tau_cap=tau_cap(mesh, planes))
    win = hs.winner
    result = {"failed": win is None}
    if win is not None:
        result.update({"pose": win.pose.to_dict(), "score": win.score_value, "subset": list(win.subset)})
        if planes is not None:
            result["tau"] = np.asarray(win.tau).tolist()
            result["planes"] = [{"n": p.n.tolist(), "d": p.d} for p in planes]
    text = json.dumps(result, indent=1)
    if args.out_dir:
        out = _out_dir(args)
        (out / "estimate.json").write_text(text + "\n")
        if args.debug_hypotheses:
            (out / "hypotheses.json").write_text(hs.to_json() + "\n")
    print(text)
    return EXIT_OK if win is not None else EXIT_FAILURES


def cmd_evaluate(args) -> int:
    records = read_records(args.records)
    n_gt = json.loads(Path(args.gt).read_text())
    report = ap_mesh(records, {str(k): int(v) for k, v in n_gt.items()})
    if args.out_dir:
        (_out_dir(args) / "ap_report.json").write_text(report.to_json() + "\n")
    print(report.table())
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = load_config(args)
    res = run_pipeline(cfg, load_zoo(args.zoo), jobs=args.jobs)
    res.write(_out_dir(args))
    print(res.report.table())
    print(f"mean F1 {res.mean_f1:.3f}, failure rate {100 * res.failure_rate:.0f}%")
    return EXIT_FAILURES if res.failure_rate > 0.5 else EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    table = run_ablation(args.name, cfg, load_zoo(args.zoo), jobs=args.jobs)
    table.write(_out_dir(args))
    print(table.to_markdown())
    worst = max(r["failure_rate"] for r in table.rows)
    return EXIT_FAILURES if worst > 0.5 else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cadstretch", description="CAD pose and stretch alignment experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--out-dir", default="out" if config else None)
        sp.add_argument("-v", "--verbose", action="store_true")
        if config:
            sp.add_argument("--config", help="experiment config JSON")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (JSON value)")
            sp.add_argument("--zoo", help="model zoo directory (default: bundled zoo)")

    sp = sub.add_parser("synth", help="write the zoo, the view database and synthetic scenes")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("estimate", help="pose (and stretch) for one mesh + mask + matches")
    common(sp, config=False)
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--matches", required=True)
    sp.add_argument("--intrinsics")
    sp.add_argument("--mode", choices=("pnp", "joint"), default="pnp")
    sp.add_argument("--init-pose", help="initial pose JSON for joint mode (default: PnP on all matches)")
    sp.add_argument("--subset-size", type=int, default=4)
    sp.add_argument("--q", type=float, default=0.2)
    sp.add_argument("--model-samples", type=int, default=1000)
    sp.add_argument("--mask-samples", type=int, default=1000)
    sp.add_argument("--debug-hypotheses", action="store_true")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("evaluate", help="AP report from detection records")
    common(sp, config=False)
    sp.add_argument("--records", required=True, help="records JSON-lines")
    sp.add_argument("--gt", required=True, help="JSON object: GT count per category")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("pipeline", help="end-to-end run over synthetic scenes")
    common(sp)
    sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("ablate", help="one-axis sweep")
    sp.add_argument("name", choices=ABLATIONS)
    common(sp)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, MeshError, EmptyMaskError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TooFewMatchesError, AllCandidatesDegenerateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURES


if __name__ == "__main__":
    sys.exit(main())

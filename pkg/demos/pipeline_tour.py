"""Small end-to-end run: retrieval, pose selection and the AP^mesh report.

Run with: python demos/pipeline_tour.py
The same run from the command line:
    cadstretch pipeline --set n_scenes=12 --set top_n=3 --out-dir out/tour
"""

from cadstretch.harness.pipeline import ExperimentConfig, run_pipeline
from cadstretch.harness.zoo import load_zoo

zoo = load_zoo()
print("zoo:", ", ".join(m.model_id for m in zoo))

cfg = ExperimentConfig(n_scenes=12, top_n=3)
for selection in ("silhouette-q0.2", "min-reprojection"):
    res = run_pipeline(cfg.replace(selection=selection), zoo)
    print(f"\nselection {selection}: mean F1 {res.mean_f1:.3f}, failures {100 * res.failure_rate:.0f}%")
    print(res.report.table())
    for s in res.scenes[:3]:
        print(f"  {s['scene_id']}: gt {s['gt_model']} -> {s.get('pred_model')} F1 {s.get('f1', 0):.3f}")

"""One-axis sweeps over the experiment configuration."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

from .pipeline import SELECTION_METRICS, ConfigError, ExperimentConfig, run_pipeline
from .zoo import ZooModel

ABLATIONS = ("match-count", "top-n", "selection-metric", "db-size")


def ablation_settings(name: str, cfg: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    """(row label, config) pairs for the named sweep."""
    if name == "match-count":
        # subset sizes 3..7; joint estimation is only defined from 6 matches up
        return [(str(n), cfg.replace(subset_size=n, estimator="pnp" if n < 6 else cfg.estimator))
                for n in range(3, 8)]
    if name == "top-n":
        return [(str(n), cfg.replace(top_n=n)) for n in (1, 3, 5, 10, 20)]
    if name == "selection-metric":
        return [(s, cfg.replace(selection=s)) for s in SELECTION_METRICS]
    if name == "db-size":
        return [(str(f), cfg.replace(db_fraction=f)) for f in (0.25, 0.5, 0.75, 1.0)]
    raise ConfigError(f"unknown ablation {name!r}; expected one of {ABLATIONS}")


@dataclass
class AblationTable:
    name: str
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("setting", "AP", "AP50", "AP75", "mean_f1", "failure_rate")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (f"{r[k]:.6f}" if isinstance(r[k], float) else r[k]) for k in self.COLUMNS})
        return buf.getvalue()

    def to_markdown(self) -> str:
        out = [f"| {self.name} | AP | AP50 | AP75 | mean F1 | failures |", "|---|---|---|---|---|---|"]
        for r in self.rows:
            out.append(f"| {r['setting']} | {100 * r['AP']:.1f} | {100 * r['AP50']:.1f} | {100 * r['AP75']:.1f} "
                       f"| {r['mean_f1']:.3f} | {100 * r['failure_rate']:.0f}% |")
        return "\n".join(out) + "\n"

    def write(self, out_dir: str | Path) -> None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"ablation_{self.name}.csv").write_text(self.to_csv())
        (d / f"ablation_{self.name}.md").write_text(self.to_markdown())


def run_ablation(name: str, cfg: ExperimentConfig, zoo: list[ZooModel] | None = None,
                 jobs: int = 1) -> AblationTable:
    table = AblationTable(name)
    for label, c in ablation_settings(name, cfg):
        res = run_pipeline(c, zoo, jobs=jobs)
        table.rows.append({"setting": label, "AP": res.report.ap, "AP50": res.report.ap50,
                           "AP75": res.report.ap75, "mean_f1": res.mean_f1, "failure_rate": res.failure_rate})
    return table

"""On-disk layout of a run and helpers to read prior runs back."""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from ..metrics import MetricReport, PerformanceMatrix
from ..taskspace import SimilarityMatrix, TaskDistribution, fit_gaussian, similarity_matrix
from ..weighting import read_scores_csv
from .config import ExperimentConfig
from .engine import RunResult

log = logging.getLogger(__name__)

RUN_FILES = ("run.json", "R.csv", "curves.csv", "betas.csv", "scores.csv", "buffer.json", "similarity.csv")


def seed_dir(out: str | Path, seed: int) -> Path:
    return Path(out) / f"seed_{seed}"


def write_curves_csv(result: RunResult, path: str | Path, split: str) -> None:
    order = result.order
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "task", "split", "auc"])
        for g, row in enumerate(result.curves):
            for j, auc in enumerate(row):
                w.writerow([g, order[j], split, f"{auc:.17g}"])


def task_distributions(scores: dict[int, np.ndarray], task_ids: Sequence[int] | None = None) -> list[TaskDistribution]:
    ids = sorted(scores) if task_ids is None else list(task_ids)
    return [fit_gaussian(scores[t], t) for t in ids]


def run_similarity(result: RunResult, variant: str = "identity") -> SimilarityMatrix | None:
    """Task similarity from this run's storage scores, or None when β was not tracked
    or a task's scores have no spread."""
    if result.betas is None:
        return None
    scores = {t: result.betas.storage_scores(t, variant) for t in result.order}
    try:
        return similarity_matrix(task_distributions(scores, result.order))
    except ValueError as exc:
        log.info("no similarity matrix: %s", exc)
        return None


def write_run(result: RunResult, cfg: ExperimentConfig, out: str | Path) -> Path:
    """Write every export of one seed's run into ``out`` and return it."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    doc = result.report.to_dict()
    doc["config"] = cfg.to_dict()
    doc["order"] = result.order
    doc["task_names"] = result.task_names
    doc["wall_clock"] = result.wall_clock
    doc["counters"] = result.counters
    if cfg.strategy == "mtl":
        doc["mtl_epochs"] = cfg.tau * len(result.order)
    (out / "run.json").write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
    result.R.write_csv(out / "R.csv")
    write_curves_csv(result, out / "curves.csv", cfg.eval_split)
    if result.betas is not None:
        result.betas.write_trajectories_csv(out / "betas.csv")
        result.betas.write_scores_csv(out / "scores.csv", cfg.storage_variant)
    if result.buffer is not None:
        result.buffer.write_json(out / "buffer.json")
    sim = run_similarity(result, cfg.storage_variant)
    if sim is not None:
        sim.write_csv(out / "similarity.csv")
    return out


def write_summary(reports: Sequence[MetricReport], path: str | Path) -> dict:
    from .report import aggregate

    summary = aggregate(reports)
    Path(path).write_text(json.dumps(summary, indent=1, sort_keys=True), encoding="utf-8")
    return summary


def read_report(path: str | Path) -> MetricReport:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    keys = ("strategy", "seed", "average_auc", "bwt", "bwt_t", "bwt_lambda", "extra")
    return MetricReport.from_dict({k: doc.get(k) for k in keys if k in doc})


def find_reports(paths: Sequence[str | Path]) -> list[Path]:
    found: list[Path] = []
    for p in map(Path, paths):
        if p.is_file():
            found.append(p)
        elif p.is_dir():
            found.extend(sorted(p.rglob("run.json")))
        else:
            raise FileNotFoundError(p)
    return found


def read_scores(run_dir: str | Path) -> dict[int, np.ndarray]:
    path = Path(run_dir) / "scores.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path}: prior run has no storage scores (was β tracked?)")
    return read_scores_csv(path)


def read_matrix(run_dir: str | Path) -> PerformanceMatrix:
    return PerformanceMatrix.read_csv(Path(run_dir) / "R.csv")

"""Task orders derived from the storage-score distributions of a prior run."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..scenarios import TaskDataset
from ..taskspace import CurriculumOrder, SimilarityMatrix, build_curriculum, similarity_matrix
from .config import ExperimentConfig
from .engine import RunResult, run
from .exports import task_distributions


def order_from_scores(
    scores: dict[int, np.ndarray], mode: str = "curriculum"
) -> tuple[CurriculumOrder, SimilarityMatrix]:
    dists = task_distributions(scores)
    sim = similarity_matrix(dists)
    return build_curriculum(dists, sim, mode), sim


def prior_run(cfg: ExperimentConfig, seed: int, tasks: Sequence[TaskDataset] | None = None) -> RunResult:
    """A given-order CLOPS run used only to measure task difficulty and similarity."""
    probe = cfg.replace(strategy="clops", task_order="given", explicit_order=None, weighting=None)
    return run(probe, seed, tasks)


def scores_of(result: RunResult, variant: str = "identity") -> dict[int, np.ndarray]:
    if result.betas is None:
        raise ValueError("run did not track task-instance parameters")
    return {t: result.betas.storage_scores(t, variant) for t in result.order}


def run_ordered(
    cfg: ExperimentConfig,
    seed: int,
    mode: str,
    tasks: Sequence[TaskDataset] | None = None,
    prior: RunResult | None = None,
) -> tuple[RunResult, CurriculumOrder, SimilarityMatrix]:
    """Derive a ``mode`` order from ``prior`` (run on demand) and train ``cfg`` in it."""
    if prior is None:
        prior = prior_run(cfg, seed, tasks)
    order, sim = order_from_scores(scores_of(prior, cfg.storage_variant), mode)
    result = run(cfg.replace(task_order="given", explicit_order=None), seed, tasks, order.task_ids)
    return result, order, sim

"""Task difficulty and similarity from storage-score distributions; curriculum chains."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

Mode = Literal["curriculum", "anti", "given"]


@dataclass(frozen=True)
class TaskDistribution:
    task_id: int
    mu: float
    sigma: float
    n: int

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"task {self.task_id}: sigma must be positive")
        if self.n < 2:
            raise ValueError(f"task {self.task_id}: need at least two samples")


def fit_gaussian(s_values: Sequence[float], task_id: int = 0) -> TaskDistribution:
    """Sample mean and sample standard deviation (n - 1 denominator)."""
    v = np.asarray(s_values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("need at least two values to fit a Gaussian")
    sigma = float(v.std(ddof=1))
    if sigma == 0.0:
        raise ValueError(f"task {task_id}: zero variance in s values")
    return TaskDistribution(task_id, float(v.mean()), sigma, int(v.size))


def difficulty(dist: TaskDistribution) -> float:
    if dist.mu <= 0:
        raise ValueError(f"task {dist.task_id}: difficulty undefined for mean {dist.mu} <= 0")
    return 1.0 / dist.mu


def hellinger_distance(d0: TaskDistribution, d1: TaskDistribution) -> float:
    var_sum = d0.sigma ** 2 + d1.sigma ** 2
    bc = math.sqrt(2.0 * d0.sigma * d1.sigma / var_sum) * math.exp(-((d0.mu - d1.mu) ** 2) / (4.0 * var_sum))
    return math.sqrt(max(0.0, 1.0 - bc))


def hellinger_similarity(d0: TaskDistribution, d1: TaskDistribution) -> float:
    """``1 - Hellinger distance`` between two univariate Gaussians."""
    return 1.0 - hellinger_distance(d0, d1)


@dataclass
class SimilarityMatrix:
    values: np.ndarray
    task_ids: list[int]

    def write_csv(self, path: str | Path, names: Sequence[str] | None = None) -> None:
        names = list(names) if names else [str(t) for t in self.task_ids]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["task"] + names)
            for name, row in zip(names, self.values):
                w.writerow([name] + [f"{v:.17g}" for v in row])


def similarity_matrix(dists: Sequence[TaskDistribution]) -> SimilarityMatrix:
    n = len(dists)
    S = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            S[i, j] = S[j, i] = hellinger_similarity(dists[i], dists[j])
    return SimilarityMatrix(S, [d.task_id for d in dists])


@dataclass
class CurriculumOrder:
    task_ids: list[int]
    mode: Mode

    def write_json(self, path: str | Path, names: dict[int, str] | None = None) -> None:
        doc = {"mode": self.mode, "task_ids": self.task_ids}
        if names:
            doc["tasks"] = [names[t] for t in self.task_ids]
        Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def build_curriculum(
    dists: Sequence[TaskDistribution], S: SimilarityMatrix | np.ndarray, mode: Mode = "curriculum"
) -> CurriculumOrder:
    """Greedy chain: start at the easiest (or hardest) task, then keep appending the
    unvisited task most similar to the last one appended."""
    ids = [d.task_id for d in dists]
    sim = S.values if isinstance(S, SimilarityMatrix) else np.asarray(S, dtype=np.float64)
    if not dists:
        raise ValueError("need at least one task")
    if sim.shape != (len(ids), len(ids)):
        raise ValueError(f"similarity matrix {sim.shape} does not match {len(ids)} tasks")
    if isinstance(S, SimilarityMatrix) and S.task_ids != ids:
        raise ValueError("similarity matrix task ids differ from the distributions")
    if mode == "given":
        return CurriculumOrder(ids, mode)
    if mode not in ("curriculum", "anti"):
        raise ValueError(f"unknown curriculum mode {mode!r}")

    d = [difficulty(x) for x in dists]
    sign = 1.0 if mode == "curriculum" else -1.0
    start = min(range(len(ids)), key=lambda k: (sign * d[k], ids[k]))
    chain, left = [start], set(range(len(ids))) - {start}
    while left:
        last = chain[-1]
        nxt = min(left, key=lambda k: (-sim[last, k], ids[k]))
        chain.append(nxt)
        left.remove(nxt)
    return CurriculumOrder([ids[k] for k in chain], mode)

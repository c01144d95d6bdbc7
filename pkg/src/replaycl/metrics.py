"""AUC and the backward-transfer family computed from a performance matrix.

``R[i, j]`` is the AUC on task ``j`` measured right after training on task
``i`` (0-based, in training order). Only the lower triangle feeds the
backward-transfer metrics.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


class DegenerateSplitError(ValueError):
    """No class in the batch has both positives and negatives."""


def binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Mann-Whitney AUC with midranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateSplitError("need both positives and negatives")
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """One-vs-rest AUC per class, averaged over classes with both outcomes present."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} do not line up")
    aucs = []
    for c in np.unique(labels):
        pos = labels == c
        if pos.all():
            continue
        aucs.append(binary_auc(scores[:, int(c)], pos))
    if not aucs:
        raise DegenerateSplitError("single-class batch: AUC undefined")
    return float(np.mean(aucs))


@dataclass
class PerformanceMatrix:
    """Rows are evaluation points (after each task), columns are tasks.

    Unpopulated cells hold NaN. A multi-task run has a single row.
    """

    values: np.ndarray
    task_names: list[str] = field(default_factory=list)

    @classmethod
    def empty(cls, n_tasks: int, task_names: Sequence[str] | None = None, rows: int | None = None):
        names = list(task_names) if task_names else [str(j) for j in range(n_tasks)]
        return cls(np.full((rows or n_tasks, n_tasks), np.nan), names)

    @property
    def n_tasks(self) -> int:
        return self.values.shape[1]

    def set_row(self, i: int, row: Sequence[float]) -> None:
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (self.n_tasks,):
            raise ValueError(f"row must have {self.n_tasks} entries")
        finite = row[np.isfinite(row)]
        if np.any((finite < 0) | (finite > 1)):
            raise ValueError("AUC entries must lie in [0, 1]")
        self.values[i] = row

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["after"] + self.task_names)
            labels = self.task_names if self.values.shape[0] == self.n_tasks else ["final"]
            for name, row in zip(labels, self.values):
                w.writerow([name] + [f"{v:.17g}" for v in row])

    @classmethod
    def read_csv(cls, path: str | Path) -> "PerformanceMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        return cls(np.array([[float(v) for v in r[1:]] for r in rows[1:]]), rows[0][1:])


def _as_array(R) -> np.ndarray:
    return np.asarray(R.values if isinstance(R, PerformanceMatrix) else R, dtype=np.float64)


def _square(R) -> np.ndarray:
    a = _as_array(R)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"backward transfer needs a square matrix, got shape {a.shape}")
    if a.shape[0] < 2:
        raise ValueError("backward transfer needs at least two tasks")
    lower = a[np.tril_indices(a.shape[0])]
    if not np.all(np.isfinite(lower)):
        raise ValueError("lower triangle of R is not fully populated")
    return a


def average_auc(R) -> float:
    """Mean of the final row."""
    a = _as_array(R)
    last = a[-1]
    if not np.all(np.isfinite(last)):
        raise ValueError("final row of R is not fully populated")
    return float(last.mean())


def bwt(R) -> float:
    a = _square(R)
    n = a.shape[0]
    return float(np.mean(a[n - 1, : n - 1] - np.diag(a)[: n - 1]))


def bwt_t(R, t: int) -> float:
    """Mean change on each task ``t`` tasks after it was learned."""
    a = _square(R)
    n = a.shape[0]
    if not 1 <= t <= n - 1:
        raise ValueError(f"t must lie in [1, {n - 1}], got {t}")
    j = np.arange(n - t)
    return float(np.mean(a[j + t, j] - a[j, j]))


def bwt_lambda(R) -> float:
    """``bwt_t``-style changes averaged over every horizon, per task, then over tasks."""
    a = _square(R)
    n = a.shape[0]
    diag = np.diag(a)
    per_task = [np.mean(a[j + 1 :, j] - diag[j]) for j in range(n - 1)]
    return float(np.mean(per_task))


@dataclass
class MetricReport:
    strategy: str
    seed: int
    average_auc: float
    bwt: float | None = None
    bwt_t: dict[int, float] | None = None
    bwt_lambda: float | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_matrix(cls, R, strategy: str, seed: int, sequential: bool = True, **extra) -> "MetricReport":
        """Build a report; ``sequential=False`` (multi-task) leaves the BWT family absent."""
        rep = cls(strategy, seed, average_auc(R), extra=dict(extra))
        a = _as_array(R)
        if sequential and a.shape[0] == a.shape[1] and a.shape[0] >= 2:
            rep.bwt = bwt(a)
            rep.bwt_t = {t: bwt_t(a, t) for t in range(1, a.shape[0])}
            rep.bwt_lambda = bwt_lambda(a)
        rep.validate()
        return rep

    def validate(self) -> None:
        if not math.isfinite(self.average_auc):
            raise ValueError("average AUC is not finite")
        family = [self.bwt, self.bwt_lambda] + list((self.bwt_t or {}).values())
        for v in family:
            if v is not None and not (math.isfinite(v) and -1.0 <= v <= 1.0):
                raise ValueError(f"backward transfer value {v} outside [-1, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.bwt_t is not None:
            d["bwt_t"] = {str(k): v for k, v in self.bwt_t.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        d = dict(d)
        if d.get("bwt_t") is not None:
            d["bwt_t"] = {int(k): v for k, v in d["bwt_t"].items()}
        return cls(**d)

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True), encoding="utf-8")

"""Replay buffer: importance-guided storage, MC-dropout posteriors, BALD acquisition.

Every ranking in this module breaks ties by ascending ``(task_id,
instance_id)`` so selections are reproducible.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Mapping, Sequence

import numpy as np
from scipy.special import entr

from .nn import Network, forward, softmax
from .scenarios import Instance

Key = tuple[int, int]
NEG_ENTROPY_TOL = 1e-12


class BufferError(RuntimeError):
    pass


def fraction_count(fraction: float, n: int) -> int:
    """``max(1, floor(fraction * n))`` for a non-empty source, else 0."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if n <= 0:
        return 0
    # the epsilon absorbs products like 0.29 * 100 = 28.999999999999996
    return max(1, math.floor(fraction * n + 1e-9))


@dataclass(frozen=True)
class BufferEntry:
    instance: Instance
    s: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.s):
            raise BufferError(f"non-finite storage score for instance {self.instance.instance_id}")

    @property
    def key(self) -> Key:
        return (self.instance.task_id, self.instance.instance_id)


class ReplayBuffer:
    """Per-task store of past instances.

    ``allotment`` caps the number of entries any single task may hold and
    ``capacity`` caps the total; both default to unlimited, in which case the
    storage fraction alone sizes the buffer.
    """

    def __init__(self, capacity: int | None = None, allotment: int | None = None):
        if capacity is not None and capacity <= 0:
            raise ValueError("capacity must be positive")
        if allotment is None and capacity is not None:
            allotment = capacity
        self.capacity = capacity
        self.allotment = allotment
        self._per_task: dict[int, tuple[BufferEntry, ...]] = {}

    @classmethod
    def with_capacity(cls, capacity: int, n_tasks_expected: int) -> "ReplayBuffer":
        return cls(capacity, capacity // n_tasks_expected)

    def __len__(self) -> int:
        return sum(len(v) for v in self._per_task.values())

    def __contains__(self, task_id: int) -> bool:
        return task_id in self._per_task

    @property
    def tasks(self) -> list[int]:
        return sorted(self._per_task)

    def entries(self, task_id: int | None = None) -> list[BufferEntry]:
        if task_id is not None:
            return list(self._per_task[task_id])
        return [e for t in self.tasks for e in self._per_task[t]]

    def _add(self, task_id: int, entries: Sequence[BufferEntry]) -> None:
        if task_id in self._per_task:
            raise BufferError(f"task {task_id} is already stored")
        if self.allotment is not None and len(entries) > self.allotment:
            raise BufferError(f"task {task_id} needs {len(entries)} slots, allotment is {self.allotment}")
        if self.capacity is not None and len(self) + len(entries) > self.capacity:
            raise BufferError(f"buffer capacity {self.capacity} exceeded")
        self._per_task[task_id] = tuple(entries)

    def snapshot(self) -> dict:
        return {
            "tasks": {
                str(t): [{"instance_id": e.instance.instance_id, "s": e.s} for e in self._per_task[t]]
                for t in self.tasks
            }
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.snapshot(), indent=1), encoding="utf-8")


def store_in_buffer(
    buf: ReplayBuffer,
    task_id: int,
    instances: Sequence[Instance],
    scores: Sequence[float] | np.ndarray,
    b: float,
    order: Literal["top", "bottom"] = "top",
) -> list[BufferEntry]:
    """Store the top (or bottom) ``b`` fraction of ``instances`` ranked by ``scores``."""
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(instances):
        raise ValueError("one storage score per instance required")
    if order not in ("top", "bottom"):
        raise ValueError(f"unknown storage order {order!r}")
    k = fraction_count(b, len(instances))
    sign = -1.0 if order == "top" else 1.0
    ranked = sorted(
        range(len(instances)),
        key=lambda i: (sign * scores[i], instances[i].task_id, instances[i].instance_id),
    )
    entries = [BufferEntry(instances[i], float(scores[i])) for i in ranked[:k]]
    buf._add(task_id, entries)
    return entries


def random_store(
    buf: ReplayBuffer,
    task_id: int,
    instances: Sequence[Instance],
    b: float,
    rng: np.random.Generator,
    scores: Sequence[float] | None = None,
) -> list[BufferEntry]:
    """Uniform storage of ``max(1, floor(b*n))`` instances; keeps scores if given."""
    k = fraction_count(b, len(instances))
    picked = sorted(rng.choice(len(instances), size=k, replace=False).tolist())
    s = np.zeros(len(instances)) if scores is None else np.asarray(scores, dtype=np.float64)
    entries = [BufferEntry(instances[i], float(s[i])) for i in picked]
    buf._add(task_id, entries)
    return entries


@dataclass
class MCOutputs:
    """``posteriors[i, t]`` is the softmax output of MC pass ``t`` for ``keys[i]``."""

    posteriors: np.ndarray
    keys: list[Key]

    def __post_init__(self) -> None:
        if self.posteriors.ndim != 3 or self.posteriors.shape[0] != len(self.keys):
            raise ValueError("posteriors must be (M, T, C) with one key per row")


def monte_carlo_samples(net: Network, buf: ReplayBuffer, T: int, rng: np.random.Generator) -> MCOutputs:
    """T dropout-perturbed forward passes over every buffered instance.

    Each pass uses its own child generator spawned up front, so the passes
    are independent of evaluation order.
    """
    if T < 1:
        raise ValueError("T must be a positive integer")
    entries = buf.entries()
    if not entries:
        raise BufferError("cannot sample an empty buffer")
    x = np.vstack([e.instance.features for e in entries])
    streams = rng.spawn(T)
    out = np.empty((len(entries), T, net.config.n_classes))
    for t, r in enumerate(streams):
        out[:, t, :] = softmax(forward(net, x, "mc", r))
    return MCOutputs(out, [e.key for e in entries])


@dataclass
class AcquisitionScores:
    scores: dict[Key, float]

    def __getitem__(self, key: Key) -> float:
        return self.scores[key]


def _entropy(p: np.ndarray) -> np.ndarray:
    return entr(p).sum(axis=-1)


def bald_mcd(G: MCOutputs, tol: float = 1e-9) -> AcquisitionScores:
    """Entropy of the MC-averaged posterior minus the mean per-pass entropy (nats)."""
    P = np.asarray(G.posteriors, dtype=np.float64)
    if np.any(P < 0) or not np.allclose(P.sum(axis=-1), 1.0, rtol=0.0, atol=tol):
        raise ValueError("posterior rows must be non-negative and sum to 1")
    score = _entropy(P.mean(axis=1)) - _entropy(P).mean(axis=1)
    if np.any(score < -NEG_ENTROPY_TOL):
        raise ValueError(f"BALD score below -{NEG_ENTROPY_TOL}: {score.min()!r}")
    score = np.maximum(score, 0.0)
    return AcquisitionScores({k: float(s) for k, s in zip(G.keys, score)})


def acquire_from_buffer(buf: ReplayBuffer, scores: AcquisitionScores, a: float) -> list[BufferEntry]:
    """Per task, the ``max(1, floor(a*k_task))`` highest-scoring entries."""
    out = []
    for t in buf.tasks:
        entries = buf.entries(t)
        try:
            vals = [scores[e.key] for e in entries]
        except KeyError as exc:
            raise BufferError(f"no acquisition score for buffered instance {exc.args[0]}") from None
        ranked = sorted(range(len(entries)), key=lambda i: (-vals[i],) + entries[i].key)
        out.extend(entries[i] for i in ranked[: fraction_count(a, len(entries))])
    return out


def random_acquire(buf: ReplayBuffer, a: float, rng: np.random.Generator) -> list[BufferEntry]:
    out = []
    for t in buf.tasks:
        entries = buf.entries(t)
        k = fraction_count(a, len(entries))
        out.extend(entries[i] for i in sorted(rng.choice(len(entries), size=k, replace=False).tolist()))
    return out


def write_scores_csv(scores: AcquisitionScores, path: str | Path, epoch: int | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow((["epoch"] if epoch is not None else []) + ["task_id", "instance_id", "score"])
        for (task_id, iid), s in sorted(scores.scores.items()):
            w.writerow(([epoch] if epoch is not None else []) + [task_id, iid, f"{s:.17g}"])

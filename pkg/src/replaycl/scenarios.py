"""Synthetic continual-learning scenarios, CSV ingestion and group-level splitting.

All three generators emit Gaussian-cluster features with one global label
space (a single shared classification head):

* ``class_il``: task ``j`` holds classes ``2j`` and ``2j+1``.
* ``time_il``: every task holds the same classes; task ``t`` shifts all class
  means by ``t * drift_scale * d`` for one seeded drift direction ``d``.
* ``domain_il``: one latent dataset viewed through a different linear
  projection per task; odd-numbered views are near-opposites of the previous
  view.

Instances come in groups (the patient analogue) and every split is made at
group level so no group crosses train/validation/test.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .rng import stream

SPLITS = ("train", "validation", "test")
DEFAULT_RATIOS = (0.6, 0.2, 0.2)
ScenarioKind = Literal["class_il", "time_il", "domain_il"]


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Instance:
    instance_id: int
    group_id: int
    task_id: int
    features: np.ndarray
    label: int

    def __post_init__(self) -> None:
        f = np.array(self.features, dtype=np.float64)
        if f.ndim != 1 or not np.all(np.isfinite(f)):
            raise DataError(f"instance {self.instance_id}: features must be a finite vector")
        f.setflags(write=False)
        object.__setattr__(self, "features", f)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            (self.instance_id, self.group_id, self.task_id, self.label)
            == (other.instance_id, other.group_id, other.task_id, other.label)
            and self.features.tobytes() == other.features.tobytes()
        )

    def __hash__(self) -> int:
        return hash((self.task_id, self.instance_id))


@dataclass
class Split:
    """Column-oriented view of one split of one task."""

    task_id: int
    instance_ids: np.ndarray
    group_ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_instances(cls, task_id: int, instances: Sequence[Instance], dim: int) -> "Split":
        if not instances:
            return cls(task_id, np.zeros(0, np.int64), np.zeros(0, np.int64),
                       np.zeros((0, dim)), np.zeros(0, np.int64))
        return cls(
            task_id,
            np.array([i.instance_id for i in instances], dtype=np.int64),
            np.array([i.group_id for i in instances], dtype=np.int64),
            np.vstack([i.features for i in instances]),
            np.array([i.label for i in instances], dtype=np.int64),
        )

    def instances(self) -> list[Instance]:
        return [
            Instance(int(i), int(g), self.task_id, x, int(y))
            for i, g, x, y in zip(self.instance_ids, self.group_ids, self.features, self.labels)
        ]

    def subset(self, positions: np.ndarray) -> "Split":
        return Split(self.task_id, self.instance_ids[positions], self.group_ids[positions],
                     self.features[positions], self.labels[positions])

    def equals(self, other: "Split") -> bool:
        return (
            self.task_id == other.task_id
            and np.array_equal(self.instance_ids, other.instance_ids)
            and np.array_equal(self.group_ids, other.group_ids)
            and np.array_equal(self.labels, other.labels)
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
        )


@dataclass
class TaskDataset:
    task_id: int
    name: str
    train: Split
    validation: Split
    test: Split

    def split(self, name: str) -> Split:
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}")
        return getattr(self, name)

    @property
    def classes(self) -> set[int]:
        return set(np.concatenate([self.train.labels, self.validation.labels, self.test.labels]).tolist())

    def equals(self, other: "TaskDataset") -> bool:
        return (
            self.task_id == other.task_id
            and all(self.split(s).equals(other.split(s)) for s in SPLITS)
        )


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind
    n_tasks: int
    n_classes: int
    feature_dim: int = 16
    train_per_task: int = 200
    noise: float = 1.0
    seed: int = 0
    class_sep: float = 1.0
    group_size: int = 4
    drift_scale: float = 1.0
    latent_dim: int | None = None
    task_noise: tuple[float, ...] | None = None
    label_noise: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("class_il", "time_il", "domain_il"):
            raise DataError(f"unknown scenario kind {self.kind!r}")
        if self.n_tasks < 1:
            raise DataError("n_tasks must be at least 1")
        if self.kind == "class_il" and self.n_classes != 2 * self.n_tasks:
            raise DataError("class_il needs n_classes == 2 * n_tasks")
        if self.n_classes < 2:
            raise DataError("need at least two classes")
        if self.train_per_task < 1 or self.group_size < 1:
            raise DataError("train_per_task and group_size must be positive")
        if self.noise < 0:
            raise DataError("noise must be non-negative")
        if self.latent_dim is not None and not 1 <= self.latent_dim <= self.feature_dim:
            raise DataError("latent_dim must lie in [1, feature_dim]")
        if not 0.0 <= self.label_noise < 0.5:
            raise DataError("label_noise must lie in [0, 0.5)")
        if self.label_noise and self.kind == "domain_il":
            raise DataError("label_noise is not supported for domain_il")
        if self.task_noise is not None:
            object.__setattr__(self, "task_noise", tuple(float(v) for v in self.task_noise))
            if len(self.task_noise) != self.n_tasks or min(self.task_noise) < 0:
                raise DataError("task_noise needs one non-negative multiplier per task")

    def noise_for(self, task: int) -> float:
        return self.noise * (self.task_noise[task] if self.task_noise else 1.0)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if d["task_noise"] is not None:
            d["task_noise"] = list(d["task_noise"])
        return d


def _pool_size(spec: ScenarioSpec) -> int:
    return math.ceil(spec.train_per_task / DEFAULT_RATIOS[0])


def _task_groups(spec: ScenarioSpec, task: int, n: int) -> np.ndarray:
    """Group ids for one task's pool; no group spans two tasks."""
    per_task = math.ceil(n / spec.group_size)
    return task * per_task + np.arange(n) // spec.group_size


def _balanced_labels(classes: Sequence[int], n: int, rng: np.random.Generator) -> np.ndarray:
    labels = np.array([classes[i % len(classes)] for i in range(n)], dtype=np.int64)
    return rng.permutation(labels)


def _make_task(
    task_id: int, name: str, ids: np.ndarray, groups: np.ndarray, x: np.ndarray, y: np.ndarray,
    seed: int,
    label_noise: float = 0.0,
) -> TaskDataset:
    insts = [Instance(int(i), int(g), task_id, f, int(c)) for i, g, f, c in zip(ids, groups, x, y)]
    parts = list(split_by_group(insts, DEFAULT_RATIOS, stream(seed, "split", task_id)))
    if label_noise > 0:
        parts[0] = _flip_labels(parts[0], sorted(set(int(c) for c in y)), label_noise, stream(seed, "label_noise", task_id))
    dim = x.shape[1]
    return TaskDataset(task_id, name, *(Split.from_instances(task_id, p, dim) for p in parts))


def _flip_labels(
    insts: list[Instance], classes: list[int], rate: float, rng: np.random.Generator
) -> list[Instance]:
    """Replace each label, with probability ``rate``, by a different class of the same task."""
    flip = rng.random(len(insts)) < rate
    other = rng.integers(0, len(classes) - 1, size=len(insts))
    out = []
    for inst, f, o in zip(insts, flip, other):
        if f:
            rest = [c for c in classes if c != inst.label]
            inst = Instance(inst.instance_id, inst.group_id, inst.task_id, inst.features, rest[o])
        out.append(inst)
    return out


def _class_means(spec: ScenarioSpec) -> np.ndarray:
    """Seeded class means; with ``latent_dim`` they span a shared low-dimensional subspace."""
    rng = stream(spec.seed, "class_means")
    if spec.latent_dim is None:
        return rng.normal(0.0, spec.class_sep, size=(spec.n_classes, spec.feature_dim))
    z = rng.normal(0.0, spec.class_sep, size=(spec.n_classes, spec.latent_dim))
    return z @ _orthonormal(spec.latent_dim, spec.feature_dim, rng)


def gen_class_il(spec: ScenarioSpec) -> list[TaskDataset]:
    if spec.kind != "class_il":
        raise DataError("gen_class_il needs a class_il spec")
    if spec.feature_dim < 2:
        raise DataError("class_il needs feature_dim >= 2")
    m, n = spec.feature_dim, _pool_size(spec)
    means = _class_means(spec)
    tasks = []
    for t in range(spec.n_tasks):
        rng = stream(spec.seed, "task", t)
        y = _balanced_labels([2 * t, 2 * t + 1], n, rng)
        x = means[y] + spec.noise_for(t) * rng.standard_normal((n, m))
        ids = np.arange(n) + t * n
        groups = _task_groups(spec, t, n)
        tasks.append(_make_task(t, f"{2 * t}-{2 * t + 1}", ids, groups, x, y, spec.seed, spec.label_noise))
    return tasks


def gen_time_il(spec: ScenarioSpec) -> list[TaskDataset]:
    if spec.kind != "time_il":
        raise DataError("gen_time_il needs a time_il spec")
    if spec.n_tasks < 2:
        raise DataError("time_il needs at least two tasks")
    m, n = spec.feature_dim, _pool_size(spec)
    base = stream(spec.seed, "class_means")
    means = base.normal(0.0, spec.class_sep, size=(spec.n_classes, m))
    drift = stream(spec.seed, "drift").standard_normal(m)
    classes = list(range(spec.n_classes))
    tasks = []
    for t in range(spec.n_tasks):
        rng = stream(spec.seed, "task", t)
        y = _balanced_labels(classes, n, rng)
        x = means[y] + t * spec.drift_scale * drift + spec.noise_for(t) * rng.standard_normal((n, m))
        ids = np.arange(n) + t * n
        groups = _task_groups(spec, t, n)
        tasks.append(_make_task(t, f"term-{t + 1}", ids, groups, x, y, spec.seed, spec.label_noise))
    return tasks


def _orthonormal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), max(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q[:rows, :cols]


def domain_projections(spec: ScenarioSpec) -> list[np.ndarray]:
    """Seeded (feature_dim x latent_dim) views; view ``2k+1`` is roughly ``-view 2k``."""
    d = spec.latent_dim or spec.feature_dim
    rng = stream(spec.seed, "projections")
    views = []
    for v in range(spec.n_tasks):
        if v % 2 == 0:
            views.append(_orthonormal(spec.feature_dim, d, rng))
        else:
            jitter = 0.1 * rng.standard_normal((spec.feature_dim, d)) / np.sqrt(d)
            views.append(-(views[v - 1] + jitter))
    return views


def gen_domain_il(spec: ScenarioSpec, projections: Sequence[np.ndarray] | None = None) -> list[TaskDataset]:
    if spec.kind != "domain_il":
        raise DataError("gen_domain_il needs a domain_il spec")
    if spec.n_tasks < 2:
        raise DataError("domain_il needs at least two tasks")
    d = spec.latent_dim or spec.feature_dim
    if projections is None:
        projections = domain_projections(spec)
    if len(projections) != spec.n_tasks:
        raise DataError("need one projection per task")
    n = _pool_size(spec)
    rng = stream(spec.seed, "latent")
    means = stream(spec.seed, "class_means").normal(0.0, spec.class_sep, size=(spec.n_classes, d))
    y = _balanced_labels(list(range(spec.n_classes)), n, rng)
    z = means[y] + spec.noise * rng.standard_normal((n, d))
    local = np.arange(n)
    groups = local // spec.group_size
    parts = split_by_group(
        [Instance(int(i), int(g), 0, zz, int(c)) for i, g, zz, c in zip(local, groups, z, y)],
        DEFAULT_RATIOS, stream(spec.seed, "split", 0),
    )
    split_of = {inst.instance_id: s for s, part in enumerate(parts) for inst in part}
    tasks = []
    for v, proj in enumerate(projections):
        proj = np.asarray(proj, dtype=np.float64)
        if proj.shape != (spec.feature_dim, d):
            raise DataError(f"projection {v} has shape {proj.shape}, expected {(spec.feature_dim, d)}")
        x = z @ proj.T
        if spec.task_noise:
            x = x + (spec.noise_for(v) - spec.noise) * stream(spec.seed, "view_noise", v).standard_normal(x.shape)
        ids = local + v * n
        buckets: list[list[Instance]] = [[], [], []]
        for k in range(n):
            buckets[split_of[k]].append(Instance(int(ids[k]), int(groups[k]), v, x[k], int(y[k])))
        tasks.append(TaskDataset(v, f"view-{v + 1}",
                                 *(Split.from_instances(v, b, spec.feature_dim) for b in buckets)))
    return tasks


def generate(spec: ScenarioSpec) -> list[TaskDataset]:
    return {"class_il": gen_class_il, "time_il": gen_time_il, "domain_il": gen_domain_il}[spec.kind](spec)


def split_by_group(
    instances: Sequence[Instance],
    ratios: Sequence[float] = DEFAULT_RATIOS,
    rng: np.random.Generator | None = None,
) -> tuple[list[Instance], ...]:
    """Shuffle groups and pack each whole group into the split furthest below its target.

    The fill level of a split is ``instances assigned / (ratio * total)``; each
    group goes to the split with the lowest fill level (ties to the earlier
    split), so split sizes track the ratios while group disjointness is exact.
    """
    ratios = [float(r) for r in ratios]
    if any(r <= 0 for r in ratios):
        raise DataError("split ratios must be positive")
    by_group: dict[int, list[Instance]] = {}
    for inst in instances:
        by_group.setdefault(inst.group_id, []).append(inst)
    if len(by_group) < len(ratios):
        raise DataError(f"need at least {len(ratios)} groups to split, got {len(by_group)}")
    order = sorted(by_group)
    if rng is not None:
        order = [order[i] for i in rng.permutation(len(order))]
    total = float(len(instances))
    targets = [r / sum(ratios) * total for r in ratios]
    parts: list[list[Instance]] = [[] for _ in ratios]
    for g in order:
        fill = [len(p) / t for p, t in zip(parts, targets)]
        parts[int(np.argmin(fill))].extend(by_group[g])
    return tuple(parts)


def write_csv(tasks: Iterable[TaskDataset], path: str | Path) -> None:
    tasks = list(tasks)
    dim = tasks[0].train.features.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "group_id", "task_id", "split", "label"] + [f"f{k}" for k in range(dim)])
        for task in tasks:
            for split_name in SPLITS:
                s = task.split(split_name)
                for i, g, x, y in zip(s.instance_ids, s.group_ids, s.features, s.labels):
                    w.writerow([int(i), int(g), task.task_id, split_name, int(y)]
                               + [f"{v:.17g}" for v in x])


def load_csv(path: str | Path, n_features: int | None = None) -> list[TaskDataset]:
    """Read a CSV in the ``write_csv`` schema into validated task datasets."""
    required = ["instance_id", "group_id", "task_id", "split", "label"]
    rows: dict[int, dict[str, list[Instance]]] = {}
    group_split: dict[int, tuple[str, int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: no data rows")
        header = [h.strip() for h in header]
        if header[:5] != required:
            raise DataError(f"{path}: header must start with {','.join(required)}")
        feat_cols = header[5:]
        if feat_cols != [f"f{k}" for k in range(len(feat_cols))] or not feat_cols:
            raise DataError(f"{path}: feature columns must be f0..f(m-1)")
        if n_features is not None and len(feat_cols) != n_features:
            raise DataError(f"{path}: expected {n_features} features, found {len(feat_cols)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            try:
                iid, gid, tid, label = int(row[0]), int(row[1]), int(row[2]), int(row[4])
                feats = [float(v) for v in row[5:]]
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: malformed row ({exc})") from None
            split_name = row[3].strip()
            if split_name not in SPLITS:
                raise DataError(f"{path}:{line_no}: split {split_name!r} not one of {SPLITS}")
            if label < 0:
                raise DataError(f"{path}:{line_no}: negative label")
            seen = group_split.setdefault(gid, (split_name, line_no))
            if seen[0] != split_name:
                raise DataError(
                    f"{path}:{line_no}: group {gid} appears in both {seen[0]} and {split_name}"
                )
            try:
                inst = Instance(iid, gid, tid, np.array(feats), label)
            except DataError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from None
            rows.setdefault(tid, {s: [] for s in SPLITS})[split_name].append(inst)
    if not rows:
        raise DataError(f"{path}: no data rows")
    dim = len(feat_cols)
    return [
        TaskDataset(tid, f"task-{tid}", *(Split.from_instances(tid, rows[tid][s], dim) for s in SPLITS))
        for tid in sorted(rows)
    ]

"""Task-instance coefficients (beta): weighted loss, updates, trajectories, storage score."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

Variant = Literal["identity", "squared"]


def current_loss(losses: np.ndarray, betas: np.ndarray, lam: float) -> float:
    """Mean over the current-task rows of ``beta*L + lam*(beta-1)^2``."""
    losses = np.asarray(losses, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("current-task batch is empty")
    if losses.shape != betas.shape:
        raise ValueError(f"losses {losses.shape} and betas {betas.shape} differ in shape")
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    return float(np.mean(betas * losses + lam * (betas - 1.0) ** 2))


def beta_gradient(loss_i: float, beta_i: float, lam: float, batch_size: int) -> float:
    """Exact partial derivative of :func:`current_loss` with respect to one beta."""
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    return (loss_i + 2.0 * lam * (beta_i - 1.0)) / batch_size


def replay_loss(
    per_task_losses: Mapping[int, np.ndarray],
    betas: "BetaTable | None" = None,
    weighted: bool = False,
    instance_ids: Mapping[int, np.ndarray] | None = None,
) -> float:
    """Mean replay loss over every replayed row, optionally scaled by frozen betas.

    With ``weighted`` each loss is multiplied by the stored (frozen) beta of
    its instance, looked up through ``instance_ids``. An empty replay set
    contributes 0.
    """
    if weighted and (betas is None or instance_ids is None):
        raise ValueError("weighted replay needs a BetaTable and instance ids")
    total, count = 0.0, 0
    for task_id, losses in per_task_losses.items():
        losses = np.asarray(losses, dtype=np.float64)
        if betas is not None and task_id not in betas:
            raise KeyError(f"unknown task_id {task_id} in replay losses")
        if weighted:
            losses = losses * betas.frozen_values(task_id, instance_ids[task_id])
        total += float(losses.sum())
        count += losses.size
    return total / count if count else 0.0


def total_loss(current: float, replay: float) -> float:
    return current + replay


@dataclass
class Objective:
    """Loss value and its partials for one mini-batch."""

    value: float
    d_current: np.ndarray
    d_replay: np.ndarray
    d_beta: np.ndarray


def batch_objective(
    current_losses: np.ndarray,
    betas: np.ndarray | None,
    lam: float,
    replay_losses: np.ndarray | None = None,
    replay_weights: np.ndarray | None = None,
) -> Objective:
    """Current (optionally beta-weighted) loss plus mean replay loss.

    ``betas=None`` gives the plain mean cross-entropy on the current rows and
    a zero ``d_beta``. ``replay_weights`` are constants (frozen betas).
    """
    cur = np.asarray(current_losses, dtype=np.float64)
    n_cur = cur.size
    if n_cur == 0:
        raise ValueError("current-task batch is empty")
    if betas is None:
        value = float(cur.mean())
        d_current = np.full(n_cur, 1.0 / n_cur)
        d_beta = np.zeros(n_cur)
    else:
        b = np.asarray(betas, dtype=np.float64)
        value = current_loss(cur, b, lam)
        d_current = b / n_cur
        d_beta = (cur + 2.0 * lam * (b - 1.0)) / n_cur

    rep = np.zeros(0) if replay_losses is None else np.asarray(replay_losses, dtype=np.float64)
    if rep.size:
        w = np.ones(rep.size) if replay_weights is None else np.asarray(replay_weights, dtype=np.float64)
        value = total_loss(value, float((w * rep).sum() / rep.size))
        d_replay = w / rep.size
    else:
        d_replay = np.zeros(0)
    return Objective(value, d_current, d_replay, d_beta)


def storage_score(values: Sequence[float] | np.ndarray, variant: Variant = "identity") -> float:
    """Trapezoid area under a beta trajectory sampled once per epoch."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 2:
        # (epoch, beta) pairs
        epochs = v[:, 0]
        if not np.allclose(np.diff(epochs), 1.0):
            raise ValueError("trajectory epochs must be evenly spaced by 1")
        v = v[:, 1]
    if v.size < 2:
        raise ValueError("storage score needs at least two trajectory points")
    if variant == "squared":
        v = v * v
    elif variant != "identity":
        raise ValueError(f"unknown storage variant {variant!r}")
    return float(np.sum((v[1:] + v[:-1]) * 0.5))


@dataclass
class _TaskBetas:
    instance_ids: np.ndarray
    beta: np.ndarray
    epochs: list[int]
    history: list[np.ndarray]
    m: np.ndarray
    v: np.ndarray
    steps: np.ndarray
    frozen: bool = False
    index: dict[int, int] = field(default_factory=dict)


class BetaTable:
    """Per-(task, instance) beta values with per-epoch trajectories.

    ``optimizer="adam"`` keeps a lazy Adam state per instance (an instance's
    moments only advance on steps where it received a gradient);
    ``optimizer="sgd"`` is the plain ``beta -= lr * grad`` rule.
    """

    def __init__(
        self,
        lr: float,
        optimizer: Literal["adam", "sgd"] = "adam",
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError(f"beta learning rate must be positive, got {lr}")
        if optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown beta optimizer {optimizer!r}")
        self.lr = lr
        self.optimizer = optimizer
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._tasks: dict[int, _TaskBetas] = {}

    def __contains__(self, task_id: int) -> bool:
        return task_id in self._tasks

    @property
    def tasks(self) -> list[int]:
        return list(self._tasks)

    def register(self, task_id: int, instance_ids: Iterable[int]) -> None:
        """Initialise every beta of the task to 1 and record the epoch-0 point."""
        if task_id in self._tasks:
            raise ValueError(f"task {task_id} already registered")
        ids = np.asarray(list(instance_ids), dtype=np.int64)
        if len(set(ids.tolist())) != ids.size:
            raise ValueError("instance ids must be unique within a task")
        n = ids.size
        beta = np.ones(n)
        self._tasks[task_id] = _TaskBetas(
            ids, beta, [0], [beta.copy()], np.zeros(n), np.zeros(n), np.zeros(n, dtype=np.int64),
            index={int(i): k for k, i in enumerate(ids)},
        )

    def _positions(self, task_id: int, instance_ids: Iterable[int]) -> np.ndarray:
        t = self._task(task_id)
        try:
            return np.array([t.index[int(i)] for i in instance_ids], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"instance {exc.args[0]} not registered for task {task_id}") from None

    def _task(self, task_id: int) -> _TaskBetas:
        try:
            return self._tasks[task_id]
        except KeyError:
            raise KeyError(f"unknown task_id {task_id}") from None

    def instance_ids(self, task_id: int) -> np.ndarray:
        return self._task(task_id).instance_ids.copy()

    def values(self, task_id: int, instance_ids: Iterable[int] | None = None) -> np.ndarray:
        t = self._task(task_id)
        if instance_ids is None:
            return t.beta.copy()
        return t.beta[self._positions(task_id, instance_ids)]

    def frozen_values(self, task_id: int, instance_ids: Iterable[int]) -> np.ndarray:
        if not self._task(task_id).frozen:
            raise ValueError(f"task {task_id} is not frozen")
        return self.values(task_id, instance_ids)

    def is_frozen(self, task_id: int) -> bool:
        return self._task(task_id).frozen

    def freeze(self, task_id: int) -> None:
        self._task(task_id).frozen = True

    def update(self, task_id: int, instance_ids: Sequence[int], grads: np.ndarray) -> None:
        t = self._task(task_id)
        if t.frozen:
            raise ValueError(f"betas of task {task_id} are frozen")
        pos = self._positions(task_id, instance_ids)
        if np.unique(pos).size != pos.size:
            raise ValueError("duplicate instance ids in one beta update")
        g = np.asarray(grads, dtype=np.float64)
        if self.optimizer == "sgd":
            t.beta[pos] -= self.lr * g
            return
        t.steps[pos] += 1
        t.m[pos] = self.beta1 * t.m[pos] + (1.0 - self.beta1) * g
        t.v[pos] = self.beta2 * t.v[pos] + (1.0 - self.beta2) * g * g
        bc1 = 1.0 - self.beta1 ** t.steps[pos]
        bc2 = 1.0 - self.beta2 ** t.steps[pos]
        t.beta[pos] -= self.lr * (t.m[pos] / bc1) / (np.sqrt(t.v[pos] / bc2) + self.eps)

    def record_epoch(self, task_id: int, epoch: int) -> None:
        t = self._task(task_id)
        if epoch <= t.epochs[-1]:
            raise ValueError(
                f"epoch {epoch} already recorded or out of order for task {task_id} "
                f"(last recorded {t.epochs[-1]})"
            )
        t.epochs.append(int(epoch))
        t.history.append(t.beta.copy())

    def trajectory(self, task_id: int, instance_id: int) -> list[tuple[int, float]]:
        t = self._task(task_id)
        k = self._positions(task_id, [instance_id])[0]
        return [(e, float(h[k])) for e, h in zip(t.epochs, t.history)]

    def history(self, task_id: int) -> tuple[np.ndarray, np.ndarray]:
        """Recorded epochs and a (n_points, n_instances) array of betas."""
        t = self._task(task_id)
        return np.array(t.epochs), np.vstack(t.history)

    def storage_scores(self, task_id: int, variant: Variant = "identity") -> np.ndarray:
        """Storage score of every instance of the task, aligned with :meth:`instance_ids`."""
        epochs, hist = self.history(task_id)
        if hist.shape[0] < 2:
            raise ValueError(f"task {task_id} has fewer than two trajectory points")
        if not np.all(np.diff(epochs) == 1):
            raise ValueError("trajectory epochs must be consecutive")
        if variant not in ("identity", "squared"):
            raise ValueError(f"unknown storage variant {variant!r}")
        h = hist * hist if variant == "squared" else hist
        return 0.5 * (h[1:] + h[:-1]).sum(axis=0)

    def write_trajectories_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["task_id", "instance_id", "epoch", "beta"])
            for task_id, t in self._tasks.items():
                for k, iid in enumerate(t.instance_ids):
                    for e, h in zip(t.epochs, t.history):
                        w.writerow([task_id, int(iid), e, f"{h[k]:.17g}"])

    def write_scores_csv(self, path: str | Path, variant: Variant = "identity") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["task_id", "instance_id", "s"])
            for task_id, t in self._tasks.items():
                if len(t.epochs) < 2:
                    continue
                for iid, s in zip(t.instance_ids, self.storage_scores(task_id, variant)):
                    w.writerow([task_id, int(iid), f"{s:.17g}"])


def record_epoch(table: BetaTable, task_id: int, epoch: int) -> None:
    table.record_epoch(task_id, epoch)


def read_scores_csv(path: str | Path) -> dict[int, np.ndarray]:
    """Load an s-score export back into ``{task_id: scores}``."""
    out: dict[int, list[float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(int(row["task_id"]), []).append(float(row["s"]))
    return {k: np.array(v) for k, v in out.items()}

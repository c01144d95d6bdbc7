"""Training loops for every strategy and the shared evaluation bookkeeping.

Timeline: with ``tau`` epochs per task, the task at position ``k`` of the
training order occupies global epochs ``[k*tau, (k+1)*tau)``. Storage happens
after the last epoch of each task. MC sampling runs at the start of every
global epoch ``>= tau + tau_mc_offset`` and acquisition at every epoch ``>=
tau + tau_s_offset``; the acquired set is replayed until the next sample
epoch replaces it.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import buffer as bf
from ..metrics import MetricReport, PerformanceMatrix, macro_auc
from ..nn import (
    AdamState,
    Network,
    NetworkConfig,
    adam_step,
    backward,
    ce_logit_grad,
    forward,
    per_instance_ce_from_logits,
    softmax,
)
from ..rng import stream
from ..scenarios import Split, TaskDataset, generate
from ..weighting import BetaTable, batch_objective
from .config import ABLATIONS, ExperimentConfig

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    R: PerformanceMatrix
    curves: np.ndarray  # (total_epochs, n_tasks) AUC on the eval split, columns in training order
    report: MetricReport
    order: list[int]
    task_names: list[str]
    betas: BetaTable | None = None
    buffer: bf.ReplayBuffer | None = None
    net: Network | None = None
    wall_clock: float = 0.0
    counters: dict[str, int] = field(default_factory=dict)
    last_scores: bf.AcquisitionScores | None = None


def network_config(cfg: ExperimentConfig) -> NetworkConfig:
    sc = cfg.scenario
    return NetworkConfig((sc.feature_dim, *cfg.hidden, sc.n_classes), cfg.dropout)


def evaluate_row(net: Network, tasks: Sequence[TaskDataset], split: str = "validation") -> np.ndarray:
    """Macro AUC of ``net`` on each task's ``split`` (eval mode)."""
    row = np.empty(len(tasks))
    for j, task in enumerate(tasks):
        s = task.split(split)
        row[j] = macro_auc(softmax(forward(net, s.features, "eval")), s.labels)
    return row


def resolve_order(cfg: ExperimentConfig, order: Sequence[int] | None = None) -> list[int]:
    n = cfg.scenario.n_tasks
    if order is not None:
        order = [int(t) for t in order]
        if sorted(order) != list(range(n)):
            raise ValueError(f"task order {order} is not a permutation of {n} tasks")
        return order
    if cfg.explicit_order is not None:
        return list(cfg.explicit_order)
    if cfg.task_order == "given":
        return list(range(n))
    if cfg.task_order == "permutation":
        return stream(cfg.permutation_seed, "task_order").permutation(n).tolist()
    raise ValueError(f"task_order={cfg.task_order!r} needs an explicit order (see curriculum_order)")


class _Trainer:
    """Shared state for one (config, seed) run."""

    def __init__(self, cfg: ExperimentConfig, seed: int, tasks: Sequence[TaskDataset], order: list[int]):
        self.cfg = cfg
        self.seed = seed
        self.tasks = [tasks[t] for t in order]
        self.order = order
        self.net = Network.init(network_config(cfg), stream(seed, "init"))
        self.opt = AdamState.zeros_like(self.net.parameters())
        self.dropout_rng = stream(seed, "dropout")
        self.counters = {"buffer_constructions": 0, "mc_calls": 0, "acquisitions": 0, "steps": 0}
        self.curves = np.full((cfg.tau * len(self.tasks), len(self.tasks)), np.nan)

    def eval_row(self) -> np.ndarray:
        return evaluate_row(self.net, self.tasks, self.cfg.eval_split)

    def step(
        self,
        x: np.ndarray,
        y: np.ndarray,
        n_current: int,
        betas: np.ndarray | None,
        replay_weights: np.ndarray | None = None,
    ) -> np.ndarray:
        """One optimisation step; rows ``[:n_current]`` are current-task rows.

        Returns ``dLoss/dbeta`` for the current rows.
        """
        logits, trace = forward(self.net, x, "train", self.dropout_rng, keep_trace=True)
        losses = per_instance_ce_from_logits(logits, y)
        obj = batch_objective(
            losses[:n_current], betas, self.cfg.lam,
            losses[n_current:] if len(y) > n_current else None, replay_weights,
        )
        row_w = np.concatenate([obj.d_current, obj.d_replay])
        grads = backward(self.net, trace, ce_logit_grad(softmax(logits), y, row_w))
        adam_step(self.net, grads, self.opt, self.cfg.lr)
        self.counters["steps"] += 1
        return obj.d_beta


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i : i + size] for i in range(0, n, size)]


class _ReplayCycle:
    """Endless shuffled pass over the acquired entries."""

    def __init__(self, entries: list[bf.BufferEntry], rng: np.random.Generator):
        self.entries = entries
        self.rng = rng
        self._queue: list[int] = []

    def take(self, k: int) -> list[bf.BufferEntry]:
        out = []
        while len(out) < k and self.entries:
            if not self._queue:
                self._queue = self.rng.permutation(len(self.entries)).tolist()
            out.append(self.entries[self._queue.pop()])
        return out


def _stack(entries: list[bf.BufferEntry]) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.vstack([e.instance.features for e in entries]),
        np.array([e.instance.label for e in entries], dtype=np.int64),
    )


def _finish(tr: _Trainer, R: PerformanceMatrix, sequential: bool, t0: float, **extra) -> RunResult:
    report = MetricReport.from_matrix(
        R, tr.cfg.strategy, tr.seed, sequential=sequential,
        order=tr.order, **extra,
    )
    return RunResult(
        R=R, curves=tr.curves, report=report, order=tr.order,
        task_names=[t.name for t in tr.tasks], net=tr.net,
        wall_clock=time.perf_counter() - t0, counters=tr.counters,
    )


def run_replay(cfg: ExperimentConfig, seed: int, tasks: Sequence[TaskDataset], order: list[int]) -> RunResult:
    """The replay loop shared by CLOPS and its ablations (and plain fine-tuning)."""
    t0 = time.perf_counter()
    tr = _Trainer(cfg, seed, tasks, order)
    strategy = cfg.strategy
    uses_buffer = strategy != "fine_tune"
    random_storage = strategy in ("random_storage", "random_both")
    random_acq = strategy in ("random_acquisition", "random_both")
    weighting = cfg.use_weighting
    track_betas = weighting or (uses_buffer and not random_storage)

    betas = BetaTable(cfg.effective_beta_lr, cfg.beta_optimizer) if track_betas else None
    buf = None
    if uses_buffer:
        buf = (
            bf.ReplayBuffer.with_capacity(cfg.buffer_capacity, len(tr.tasks))
            if cfg.buffer_capacity else bf.ReplayBuffer()
        )
        tr.counters["buffer_constructions"] += 1
    R = PerformanceMatrix.empty(len(tr.tasks), [t.name for t in tr.tasks])
    acquired: list[bf.BufferEntry] = []
    scores: bf.AcquisitionScores | None = None

    for k, task in enumerate(tr.tasks):
        train = task.train
        if betas is not None:
            betas.register(task.task_id, train.instance_ids)
        for e in range(cfg.tau):
            g = k * cfg.tau + e
            if buf is not None and len(buf):
                if g >= cfg.mc_start and not random_acq:
                    G = bf.monte_carlo_samples(tr.net, buf, cfg.T, stream(seed, "mc", g))
                    scores = bf.bald_mcd(G)
                    tr.counters["mc_calls"] += 1
                if g >= cfg.sample_start:
                    if random_acq:
                        acquired = bf.random_acquire(buf, cfg.a, stream(seed, "acquire", g))
                    else:
                        acquired = bf.acquire_from_buffer(buf, scores, cfg.a)
                    tr.counters["acquisitions"] += 1
            cycle = _ReplayCycle(acquired, stream(seed, "replay", g))
            for idx in _batches(len(train), cfg.batch_size, stream(seed, "shuffle", g)):
                x, y = train.features[idx], train.labels[idx]
                replay = cycle.take(int(round(cfg.replay_ratio * len(idx))))
                rw = None
                if replay:
                    rx, ry = _stack(replay)
                    x, y = np.vstack([x, rx]), np.concatenate([y, ry])
                    if cfg.weighted_replay:
                        rw = np.concatenate([
                            betas.frozen_values(r.instance.task_id, [r.instance.instance_id])
                            for r in replay
                        ])
                ids = train.instance_ids[idx]
                cur_betas = betas.values(task.task_id, ids) if weighting else None
                d_beta = tr.step(x, y, len(idx), cur_betas, rw)
                if weighting:
                    betas.update(task.task_id, ids, d_beta)
            if betas is not None:
                betas.record_epoch(task.task_id, e + 1)
            tr.curves[g] = tr.eval_row()
        if buf is not None:
            insts = train.instances()
            s = betas.storage_scores(task.task_id, cfg.storage_variant) if betas is not None else None
            if random_storage:
                bf.random_store(buf, task.task_id, insts, cfg.b, stream(seed, "store", k), s)
            else:
                bf.store_in_buffer(buf, task.task_id, insts, s, cfg.b, cfg.storage_order)
        if betas is not None:
            betas.freeze(task.task_id)
        R.set_row(k, tr.curves[(k + 1) * cfg.tau - 1])
        log.debug("seed %d task %s done: %s", seed, task.name, np.round(R.values[k], 3))

    res = _finish(tr, R, True, t0, weighting=weighting)
    res.betas, res.buffer, res.last_scores = betas, buf, scores
    return res


def run_mtl(cfg: ExperimentConfig, seed: int, tasks: Sequence[TaskDataset], order: list[int]) -> RunResult:
    """All tasks' training sets at once for ``N * tau`` epochs; one evaluation row."""
    t0 = time.perf_counter()
    tr = _Trainer(cfg, seed, tasks, order)
    x_all = np.vstack([t.train.features for t in tr.tasks])
    y_all = np.concatenate([t.train.labels for t in tr.tasks])
    n_epochs = cfg.tau * len(tr.tasks)
    for g in range(n_epochs):
        for idx in _batches(len(y_all), cfg.batch_size, stream(seed, "shuffle", g)):
            tr.step(x_all[idx], y_all[idx], len(idx), None)
        tr.curves[g] = tr.eval_row()
    R = PerformanceMatrix(tr.curves[-1][None, :].copy(), [t.name for t in tr.tasks])
    return _finish(tr, R, False, t0, epochs=n_epochs)


def _mir_select(
    net: Network, opt: AdamState, cfg: ExperimentConfig,
    cur_x: np.ndarray, cur_y: np.ndarray, cand: list[bf.BufferEntry],
    n_replay: int, dropout_rng: np.random.Generator,
) -> list[bf.BufferEntry]:
    """Rank candidates by their loss increase under a virtual step on the current batch."""
    cx, cy = _stack(cand)
    before = per_instance_ce_from_logits(forward(net, cx, "eval"), cy)
    virtual = net.copy()
    vlr = cfg.lr if cfg.mir_virtual_lr is None else cfg.mir_virtual_lr
    if vlr > 0:
        logits, trace = forward(virtual, cur_x, "train", dropout_rng, keep_trace=True)
        w = np.full(len(cur_y), 1.0 / len(cur_y))
        grads = backward(virtual, trace, ce_logit_grad(softmax(logits), cur_y, w))
        adam_step(virtual, grads, opt.copy(), vlr)
    after = per_instance_ce_from_logits(forward(virtual, cx, "eval"), cy)
    delta = after - before

    by_task: dict[int, list[int]] = {}
    for i, e in enumerate(cand):
        by_task.setdefault(e.instance.task_id, []).append(i)
    for t in by_task:
        by_task[t].sort(key=lambda i: (-delta[i],) + cand[i].key)
    # round-robin over tasks so every task gets an (almost) equal share
    picked: list[bf.BufferEntry] = []
    rank = 0
    task_ids = sorted(by_task)
    while len(picked) < n_replay and any(rank < len(by_task[t]) for t in task_ids):
        for t in task_ids:
            if rank < len(by_task[t]) and len(picked) < n_replay:
                picked.append(cand[by_task[t][rank]])
        rank += 1
    return picked


def run_mir(cfg: ExperimentConfig, seed: int, tasks: Sequence[TaskDataset], order: list[int]) -> RunResult:
    """Random task-aware storage; per-iteration maximally-interfered replay."""
    t0 = time.perf_counter()
    tr = _Trainer(cfg, seed, tasks, order)
    buf = bf.ReplayBuffer()
    tr.counters["buffer_constructions"] += 1
    R = PerformanceMatrix.empty(len(tr.tasks), [t.name for t in tr.tasks])
    cand_rng = stream(seed, "mir_candidates")
    virtual_rng = stream(seed, "mir_virtual")
    for k, task in enumerate(tr.tasks):
        train = task.train
        for e in range(cfg.tau):
            g = k * cfg.tau + e
            for idx in _batches(len(train), cfg.batch_size, stream(seed, "shuffle", g)):
                x, y = train.features[idx], train.labels[idx]
                n_cur = len(idx)
                if len(buf):
                    pool = buf.entries()
                    n_cand = bf.fraction_count(cfg.mir_acq_fraction, len(pool))
                    cand = [pool[i] for i in sorted(cand_rng.choice(len(pool), n_cand, replace=False))]
                    n_rep = max(1, int(round(cfg.mir_replay_ratio * n_cur)))
                    replay = _mir_select(tr.net, tr.opt, cfg, x, y, cand, n_rep, virtual_rng)
                    tr.counters["acquisitions"] += 1
                    rx, ry = _stack(replay)
                    x, y = np.vstack([x, rx]), np.concatenate([y, ry])
                tr.step(x, y, n_cur, None)
            tr.curves[g] = tr.eval_row()
        bf.random_store(buf, task.task_id, train.instances(), cfg.b, stream(seed, "store", k))
        R.set_row(k, tr.curves[(k + 1) * cfg.tau - 1])
    res = _finish(tr, R, True, t0)
    res.buffer = buf
    return res


def run(
    cfg: ExperimentConfig,
    seed: int,
    tasks: Sequence[TaskDataset] | None = None,
    order: Sequence[int] | None = None,
) -> RunResult:
    """Run ``cfg.strategy`` for one seed on ``tasks`` (generated from the scenario if omitted)."""
    if tasks is None:
        tasks = generate(cfg.scenario)
    if len(tasks) != cfg.scenario.n_tasks:
        raise ValueError(f"scenario declares {cfg.scenario.n_tasks} tasks, got {len(tasks)}")
    if [t.task_id for t in tasks] != list(range(len(tasks))):
        raise ValueError("tasks must be indexed 0..N-1")
    resolved = resolve_order(cfg, order)
    if cfg.strategy == "mtl":
        return run_mtl(cfg, seed, tasks, resolved)
    if cfg.strategy == "mir":
        return run_mir(cfg, seed, tasks, resolved)
    return run_replay(cfg, seed, tasks, resolved)


def run_clops(cfg, seed, tasks=None, order=None) -> RunResult:
    if cfg.strategy != "clops":
        raise ValueError(f"run_clops needs strategy 'clops', got {cfg.strategy!r}")
    return run(cfg, seed, tasks, order)


def run_fine_tune(cfg, seed, tasks=None, order=None) -> RunResult:
    if cfg.strategy != "fine_tune":
        raise ValueError(f"run_fine_tune needs strategy 'fine_tune', got {cfg.strategy!r}")
    return run(cfg, seed, tasks, order)


def run_ablation(cfg, seed, tasks=None, order=None) -> RunResult:
    if cfg.strategy not in ABLATIONS:
        raise ValueError(f"run_ablation needs one of {ABLATIONS}, got {cfg.strategy!r}")
    return run(cfg, seed, tasks, order)

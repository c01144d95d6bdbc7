"""Self-check suite behind ``replaycl verify``.

Each check compares a library routine with a slow, independent computation
on seeded random inputs and returns ``(ok, detail)``.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable

import numpy as np
from scipy import integrate

from .. import buffer as bf
from ..metrics import bwt, bwt_lambda, bwt_t, macro_auc
from ..nn import (
    DropoutMask,
    Network,
    NetworkConfig,
    backward,
    ce_logit_grad,
    forward,
    per_instance_ce_from_logits,
    softmax,
)
from ..taskspace import TaskDistribution, hellinger_similarity
from ..weighting import batch_objective, storage_score

Check = Callable[[], tuple[bool, str]]


def _check_bwt() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        R = rng.random((n, n))
        ref = sum(R[n - 1][j] - R[j][j] for j in range(n - 1)) / (n - 1)
        worst = max(worst, abs(bwt(R) - ref))
        for t in range(1, n):
            ref_t = sum(R[j + t][j] - R[j][j] for j in range(n - t)) / (n - t)
            worst = max(worst, abs(bwt_t(R, t) - ref_t))
        per = [sum(R[i][j] - R[j][j] for i in range(j + 1, n)) / (n - 1 - j) for j in range(n - 1)]
        worst = max(worst, abs(bwt_lambda(R) - sum(per) / len(per)))
    return worst <= 1e-12, f"max |err| = {worst:.2e}"


def _pairwise_auc(s: np.ndarray, pos: np.ndarray) -> float:
    p, q = s[pos], s[~pos]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in p for b in q)
    return wins / (len(p) * len(q))


def _check_auc() -> tuple[bool, str]:
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(50):
        b, c = int(rng.integers(4, 60)), int(rng.integers(2, 5))
        labels = rng.integers(0, c, size=b)
        labels[:2] = [0, 1]
        scores = np.round(rng.random((b, c)), 1)
        ref = np.mean([_pairwise_auc(scores[:, k], labels == k) for k in np.unique(labels)])
        worst = max(worst, abs(macro_auc(scores, labels) - ref))
    return worst <= 1e-12, f"max |err| = {worst:.2e}"


def _check_storage() -> tuple[bool, str]:
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(100):
        v = rng.random(int(rng.integers(2, 42)))
        ref = 0.0
        for t in range(len(v) - 1):
            ref += 0.5 * (v[t] + v[t + 1])
        worst = max(worst, abs(storage_score(v) - ref))
        ref2 = 0.0
        for t in range(len(v) - 1):
            ref2 += 0.5 * (v[t] ** 2 + v[t + 1] ** 2)
        worst = max(worst, abs(storage_score(v, "squared") - ref2))
    const = storage_score(np.ones(21))
    return worst <= 1e-12 and const == 20.0, f"max |err| = {worst:.2e}, constant trajectory -> {const}"


def _check_bald() -> tuple[bool, str]:
    closed = bf.bald_mcd(bf.MCOutputs(np.array([[[1.0, 0.0], [0.0, 1.0]]]), [(0, 0)])).scores[(0, 0)]
    rng = np.random.default_rng(14)
    g = rng.dirichlet(np.ones(3), size=(10_000, 5))
    s = np.array(list(bf.bald_mcd(bf.MCOutputs(g, [(0, i) for i in range(len(g))])).scores.values()))
    same = np.repeat(rng.dirichlet(np.ones(3), size=(50, 1)), 7, axis=1)
    z = np.array(list(bf.bald_mcd(bf.MCOutputs(same, [(0, i) for i in range(50)])).scores.values()))
    ok = abs(closed - math.log(2)) <= 1e-12 and s.min() >= 0 and np.abs(z).max() <= 1e-9
    return ok, f"closed form {closed:.15f}, min score {s.min():.2e}, deterministic max {np.abs(z).max():.2e}"


def _check_gradients() -> tuple[bool, str]:
    rng = np.random.default_rng(15)
    worst = 0.0
    for _ in range(20):
        cfg = NetworkConfig((4, int(rng.integers(2, 6)), 3), dropout_prob=0.3)
        net = Network.init(cfg, rng)
        x, y = rng.standard_normal((5, 4)), rng.integers(0, 3, 5)
        beta = rng.uniform(0.5, 1.5, 5)
        mask = DropoutMask.sample(cfg, 5, rng)

        def objective(n: Network, b: np.ndarray) -> float:
            losses = per_instance_ce_from_logits(forward(n, x, "train", mask=mask), y)
            return batch_objective(losses, b, 10.0).value

        logits, trace = forward(net, x, "train", mask=mask, keep_trace=True)
        obj = batch_objective(per_instance_ce_from_logits(logits, y), beta, 10.0)
        grads = backward(net, trace, ce_logit_grad(softmax(logits), y, obj.d_current)).as_list()
        eps = 1e-5
        for p, g in zip(net.parameters(), grads):
            for idx in itertools.islice(np.ndindex(p.shape), 6):
                old = p[idx]
                p[idx] = old + eps
                up = objective(net, beta)
                p[idx] = old - eps
                dn = objective(net, beta)
                p[idx] = old
                fd = (up - dn) / (2 * eps)
                worst = max(worst, abs(fd - g[idx]) / max(1e-8, abs(fd) + abs(g[idx])))
        for i in range(5):
            bp, bm = beta.copy(), beta.copy()
            bp[i] += eps
            bm[i] -= eps
            fd = (objective(net, bp) - objective(net, bm)) / (2 * eps)
            worst = max(worst, abs(fd - obj.d_beta[i]) / max(1e-8, abs(fd) + abs(obj.d_beta[i])))
    return worst <= 1e-4, f"max relative error {worst:.2e}"


def _check_hellinger() -> tuple[bool, str]:
    rng = np.random.default_rng(16)
    worst = 0.0
    for _ in range(20):
        a = TaskDistribution(0, float(rng.normal()), float(rng.uniform(0.3, 2.0)), 10)
        b = TaskDistribution(1, float(rng.normal()), float(rng.uniform(0.3, 2.0)), 10)
        lo = min(a.mu - 10 * a.sigma, b.mu - 10 * b.sigma)
        hi = max(a.mu + 10 * a.sigma, b.mu + 10 * b.sigma)

        def dens(x: float, d: TaskDistribution) -> float:
            return math.exp(-0.5 * ((x - d.mu) / d.sigma) ** 2) / (d.sigma * math.sqrt(2 * math.pi))

        bc, _ = integrate.quad(lambda x: math.sqrt(dens(x, a) * dens(x, b)), lo, hi, limit=200)
        worst = max(worst, abs(hellinger_similarity(a, b) - (1 - math.sqrt(max(0.0, 1 - bc)))))
        if hellinger_similarity(a, b) != hellinger_similarity(b, a) or hellinger_similarity(a, a) != 1.0:
            return False, "symmetry or identity violated"
    worked = hellinger_similarity(TaskDistribution(0, 0.0, 1.0, 2), TaskDistribution(1, 1.0, 1.0, 2))
    return worst <= 1e-6 and abs(worked - 0.6572) <= 1e-4, f"max quad err {worst:.2e}, S(N(0,1), N(1,1)) = {worked:.4f}"


def _check_cardinality() -> tuple[bool, str]:
    for f in (0.1, 0.25, 0.5, 1.0):
        for n in range(1, 51):
            if bf.fraction_count(f, n) != max(1, math.floor(round(f * n, 9))):
                return False, f"fraction {f}, n {n}"
    return True, "all grid fractions, n in [1, 50]"


CHECKS: dict[str, Check] = {
    "bwt family vs brute force": _check_bwt,
    "macro AUC vs pairwise oracle": _check_auc,
    "storage score vs explicit sum": _check_storage,
    "BALD properties": _check_bald,
    "gradients vs finite differences": _check_gradients,
    "Hellinger similarity vs quadrature": _check_hellinger,
    "storage/acquisition cardinality": _check_cardinality,
}


def run_all(echo: Callable[[str], None] = print) -> bool:
    ok_all = True
    for name, check in CHECKS.items():
        try:
            ok, detail = check()
        except Exception as exc:  # a crash is a failed check, not a crashed suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        ok_all &= ok
        echo(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok_all

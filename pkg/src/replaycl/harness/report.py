"""Aggregate per-seed reports into mean ± std tables."""
from __future__ import annotations

import math
from collections import defaultdict
from typing import Sequence

import numpy as np

from ..metrics import MetricReport

COLUMNS = ("average_auc", "bwt", "bwt_t", "bwt_lambda")
HEADERS = {"average_auc": "Average AUC", "bwt": "BWT", "bwt_t": "BWT_t", "bwt_lambda": "BWT_lambda"}
# the BWT_t column summarises the one-task-later horizon
SUMMARY_HORIZON = 1


def _value(rep: MetricReport, column: str) -> float | None:
    if column == "bwt_t":
        return None if rep.bwt_t is None else rep.bwt_t.get(SUMMARY_HORIZON)
    return getattr(rep, column)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (zero for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def fmt_number(x: float, digits: int = 3) -> str:
    """Negative numbers render in parentheses: -0.176 -> (0.176)."""
    s = f"{abs(x):.{digits}f}"
    return f"({s})" if x < 0 and float(s) != 0.0 else s


def fmt_cell(values: Sequence[float] | None, digits: int = 3) -> str:
    if not values:
        return "-"
    m, s = mean_std(values)
    return f"{fmt_number(m, digits)} ± {s:.{digits}f}"


def aggregate(reports: Sequence[MetricReport]) -> dict:
    """``{strategy: {column: {"mean", "std", "n"} | None}}``; None marks an absent metric."""
    groups: dict[str, list[MetricReport]] = defaultdict(list)
    for r in reports:
        groups[r.strategy].append(r)
    out: dict = {}
    for strategy, reps in groups.items():
        row: dict = {"seeds": sorted(r.seed for r in reps)}
        for col in COLUMNS:
            vals = [v for v in (_value(r, col) for r in reps) if v is not None]
            if not vals:
                row[col] = None
                continue
            m, s = mean_std(vals)
            row[col] = {"mean": m, "std": s, "n": len(vals)}
        out[strategy] = row
    return out


def format_table(reports: Sequence[MetricReport], digits: int = 3) -> str:
    groups: dict[str, list[MetricReport]] = defaultdict(list)
    for r in reports:
        groups[r.strategy].append(r)
    header = ["Strategy"] + [HEADERS[c] for c in COLUMNS]
    rows = [header]
    for strategy, reps in groups.items():
        cells = [strategy]
        for col in COLUMNS:
            vals = [v for v in (_value(r, col) for r in reps) if v is not None and math.isfinite(v)]
            cells.append(fmt_cell(vals, digits))
        rows.append(cells)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)

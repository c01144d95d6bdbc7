"""Command-line entry point: ``replaycl {run,grid,ablate,curriculum,report,verify}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from ..scenarios import DataError, generate
from . import verify
from .config import ABLATIONS, ConfigError, ExperimentConfig, load_config
from .curriculum import order_from_scores, run_ordered
from .engine import RunResult, run
from .exports import find_reports, read_report, read_scores, seed_dir, write_run, write_summary
from .report import format_table, mean_std

log = logging.getLogger("replaycl")


def parse_grid(text: str) -> tuple[list[float], list[float]]:
    """``"b=0.1,0.25;a=0.5"`` -> ([0.1, 0.25], [0.5])."""
    axes: dict[str, list[float]] = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        key, _, vals = part.partition("=")
        key = key.strip()
        if key not in ("b", "a") or not vals:
            raise ConfigError("grid", f"cannot parse {part!r}; expected b=... or a=...")
        try:
            axes[key] = [float(v) for v in vals.split(",")]
        except ValueError:
            raise ConfigError("grid", f"non-numeric value in {part!r}") from None
    if set(axes) != {"b", "a"}:
        raise ConfigError("grid", "need both a b=... and an a=... axis")
    return axes["b"], axes["a"]


def _config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config)
    changes: dict = {}
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("training.seeds", "--seeds must be at least 1")
        changes["seeds"] = tuple(range(args.seeds))
    if getattr(args, "strategy", None):
        changes["strategy"] = args.strategy
    for name in ("b", "a"):
        if getattr(args, name, None) is not None:
            changes[name] = getattr(args, name)
    return cfg.replace(**changes) if changes else cfg


def _run_seeds(
    cfg: ExperimentConfig, out: Path, order_mode: str = "given", prior: Path | None = None, label: str | None = None
) -> list[RunResult]:
    tasks = generate(cfg.scenario)
    results = []
    for seed in cfg.seeds:
        if order_mode == "given":
            res = run(cfg, seed, tasks)
        elif prior is not None:
            order, _ = order_from_scores(read_scores(seed_dir(prior, seed)), order_mode)
            res = run(cfg, seed, tasks, order.task_ids)
        else:
            res, _, _ = run_ordered(cfg, seed, order_mode, tasks)
        if label:
            res.report.strategy = label
        write_run(res, cfg, seed_dir(out, seed))
        log.info("%s seed %d: average AUC %.3f (%.1fs)", cfg.strategy, seed, res.report.average_auc, res.wall_clock)
        results.append(res)
    write_summary([r.report for r in results], out / "summary.json")
    return results


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config(args)
    out = Path(args.out)
    mode = args.order or ("given" if cfg.task_order in ("given", "permutation") else cfg.task_order)
    prior = Path(args.prior) if args.prior else None
    results = _run_seeds(cfg, out, mode, prior)
    print(format_table([r.report for r in results]))
    return 0


def cmd_grid(args: argparse.Namespace) -> int:
    cfg = _config(args)
    bs, as_ = parse_grid(args.grid)
    out = Path(args.out)
    rows = []
    for b in bs:
        for a in as_:
            cell = cfg.replace(b=b, a=a)
            results = _run_seeds(cell, out / f"b{b:g}_a{a:g}")
            m, s = mean_std([r.report.average_auc for r in results])
            rows.append((b, a, m, s))
            print(f"b={b:g} a={a:g}: Average AUC {m:.3f} ± {s:.3f}", flush=True)
    with open(out / "grid.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["b", "a", "average_auc_mean", "average_auc_std"])
        w.writerows([f"{b:.17g}", f"{a:.17g}", f"{m:.17g}", f"{s:.17g}"] for b, a, m, s in rows)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    out = Path(args.out)
    variants = {"clops": cfg.replace(strategy="clops")}
    variants.update({s: cfg.replace(strategy=s) for s in ABLATIONS})
    variants["clops_no_weighting"] = cfg.replace(strategy="clops", weighting=False)
    reports = []
    for name, vcfg in variants.items():
        reports.extend(r.report for r in _run_seeds(vcfg, out / name, label=name))
    print(format_table(reports))
    return 0


def cmd_curriculum(args: argparse.Namespace) -> int:
    cfg = _config(args)
    out = Path(args.out)
    mode = args.order or "curriculum"
    if mode == "given":
        raise ConfigError("order.task_order", "curriculum needs --order curriculum or anti")
    tasks = generate(cfg.scenario)
    results = []
    for seed in cfg.seeds:
        if args.prior:
            order, sim = order_from_scores(read_scores(seed_dir(args.prior, seed)), mode)
            res = run(cfg, seed, tasks, order.task_ids)
        else:
            res, order, sim = run_ordered(cfg, seed, mode, tasks)
        d = write_run(res, cfg, seed_dir(out, seed))
        sim.write_csv(d / "prior_similarity.csv")
        order.write_json(d / "order.json", {t.task_id: t.name for t in tasks})
        results.append(res)
    write_summary([r.report for r in results], out / "summary.json")
    print(format_table([r.report for r in results]))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    paths = find_reports(args.paths)
    if not paths:
        print("no run.json files found", file=sys.stderr)
        return 1
    reports = [read_report(p) for p in paths]
    print(format_table(reports, args.digits))
    if args.json:
        from .report import aggregate

        print(json.dumps(aggregate(reports), indent=1, sort_keys=True))
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    return 0 if verify.run_all() else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="replaycl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment(name: str, help_: str, overrides: bool = True) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="TOML experiment file")
        sp.add_argument("--seeds", type=int, help="run seeds 0..N-1 instead of the configured list")
        sp.add_argument("--out", default="runs", help="output directory")
        if overrides:
            sp.add_argument("--strategy", help="override training.strategy")
            sp.add_argument("--b", type=float, help="override buffer.b")
            sp.add_argument("--a", type=float, help="override buffer.a")
        return sp

    sp = experiment("run", "train one configuration over several seeds")
    sp.add_argument("--order", choices=("given", "curriculum", "anti"))
    sp.add_argument("--prior", help="prior run directory whose scores.csv define the order")
    sp.set_defaults(func=cmd_run)

    sp = experiment("grid", "sweep the storage/acquisition fractions")
    sp.add_argument("--grid", default="b=0.1,0.25,0.5,1;a=0.1,0.25,0.5,1")
    sp.set_defaults(func=cmd_grid)

    experiment("ablate", "CLOPS against its randomized components").set_defaults(func=cmd_ablate)

    sp = experiment("curriculum", "order tasks by difficulty and similarity, then train")
    sp.add_argument("--order", choices=("given", "curriculum", "anti"))
    sp.add_argument("--prior", help="reuse scores.csv from this prior run instead of probing")
    sp.set_defaults(func=cmd_curriculum)

    sp = sub.add_parser("report", help="aggregate run.json files into a table")
    sp.add_argument("paths", nargs="+")
    sp.add_argument("--digits", type=int, default=3)
    sp.add_argument("--json", action="store_true", help="also print the aggregate as JSON")
    sp.set_defaults(func=cmd_report)

    sub.add_parser("verify", help="run the built-in oracle checks").set_defaults(func=cmd_verify)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error in {exc.field}: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"not found: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Experiment configuration: dataclass, TOML loading and validation."""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..scenarios import DataError, ScenarioSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA = "replaycl.experiment/1"
STRATEGIES = ("clops", "fine_tune", "mtl", "mir", "random_storage", "random_acquisition", "random_both")
ABLATIONS = ("random_storage", "random_acquisition", "random_both")
REPLAY_STRATEGIES = ("clops", "mir") + ABLATIONS
TASK_ORDERS = ("given", "curriculum", "anti", "permutation")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioSpec
    strategy: str = "clops"
    hidden: tuple[int, ...] = (64,)
    dropout: float = 0.1
    tau: int = 20
    batch_size: int = 16
    lr: float = 1e-4
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    # weighting
    lam: float = 10.0
    beta_lr: float | None = None
    beta_optimizer: str = "adam"
    weighting: bool | None = None
    weighted_replay: bool = False
    storage_variant: str = "identity"
    # buffer
    b: float = 0.25
    a: float = 0.5
    T: int = 20
    storage_order: str = "top"
    tau_mc_offset: int = 0
    tau_s_offset: int = 0
    replay_ratio: float = 1.0
    buffer_capacity: int | None = None
    # MIR
    mir_acq_fraction: float = 0.5
    mir_replay_ratio: float = 1.0
    mir_virtual_lr: float | None = None
    # ordering / evaluation
    task_order: str = "given"
    permutation_seed: int = 0
    explicit_order: tuple[int, ...] | None = None
    eval_split: str = "validation"

    def __post_init__(self) -> None:
        validate(self)

    @property
    def use_weighting(self) -> bool:
        if self.weighting is not None:
            return self.weighting
        return self.strategy in ("clops", "random_storage", "random_acquisition")

    @property
    def effective_beta_lr(self) -> float:
        return self.lr if self.beta_lr is None else self.beta_lr

    @property
    def mc_start(self) -> int:
        """First global (0-based) epoch at which MC sampling may run."""
        return self.tau + self.tau_mc_offset

    @property
    def sample_start(self) -> int:
        return self.tau + self.tau_s_offset

    def replace(self, **changes: Any) -> "ExperimentConfig":
        if "scenario" in changes and isinstance(changes["scenario"], dict):
            changes["scenario"] = dataclasses.replace(self.scenario, **changes["scenario"])
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "scenario"}
        d = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        d["scenario"] = self.scenario.to_dict()
        d["schema"] = SCHEMA
        return d


def _fraction(name: str, v: float) -> None:
    if not 0.0 < v <= 1.0:
        raise ConfigError(name, f"must lie in (0, 1], got {v}")


def validate(cfg: ExperimentConfig) -> None:
    if cfg.strategy not in STRATEGIES:
        raise ConfigError("training.strategy", f"unknown strategy {cfg.strategy!r}; choose from {STRATEGIES}")
    if cfg.tau < 1:
        raise ConfigError("training.tau", "must be at least 1")
    if cfg.batch_size < 1:
        raise ConfigError("training.batch_size", "must be at least 1")
    if cfg.lr <= 0:
        raise ConfigError("training.lr", "must be positive")
    if not cfg.seeds or any(s < 0 for s in cfg.seeds):
        raise ConfigError("training.seeds", "need at least one non-negative seed")
    if not cfg.hidden or any(h < 1 for h in cfg.hidden):
        raise ConfigError("network.hidden", "need at least one positive hidden width")
    if not 0.0 <= cfg.dropout < 1.0:
        raise ConfigError("network.dropout", "must lie in [0, 1)")
    if cfg.lam < 0:
        raise ConfigError("weighting.lambda", "must be non-negative")
    if cfg.beta_lr is not None and cfg.beta_lr <= 0:
        raise ConfigError("weighting.beta_lr", "must be positive")
    if cfg.beta_optimizer not in ("adam", "sgd"):
        raise ConfigError("weighting.beta_optimizer", "must be 'adam' or 'sgd'")
    if cfg.storage_variant not in ("identity", "squared"):
        raise ConfigError("weighting.storage_variant", "must be 'identity' or 'squared'")
    _fraction("buffer.b", cfg.b)
    _fraction("buffer.a", cfg.a)
    if cfg.T < 1:
        raise ConfigError("buffer.T", "must be a positive integer")
    if cfg.storage_order not in ("top", "bottom"):
        raise ConfigError("buffer.storage_order", "must be 'top' or 'bottom'")
    # tau_S >= tau_MC > tau, with offsets counted from the first epoch after task 1
    if cfg.tau_mc_offset < 0:
        raise ConfigError("buffer.tau_mc_offset", "MC epochs must come after the first task (offset >= 0)")
    if cfg.tau_s_offset < cfg.tau_mc_offset:
        raise ConfigError("buffer.tau_s_offset", "sample epochs must not precede MC epochs")
    if cfg.replay_ratio <= 0:
        raise ConfigError("buffer.replay_ratio", "must be positive")
    if cfg.buffer_capacity is not None and cfg.buffer_capacity < 1:
        raise ConfigError("buffer.capacity", "must be positive")
    _fraction("mir.acq_fraction", cfg.mir_acq_fraction)
    if cfg.mir_replay_ratio <= 0:
        raise ConfigError("mir.replay_ratio", "must be positive")
    if cfg.mir_virtual_lr is not None and cfg.mir_virtual_lr < 0:
        raise ConfigError("mir.virtual_lr", "must be non-negative")
    if cfg.task_order not in TASK_ORDERS:
        raise ConfigError("order.task_order", f"must be one of {TASK_ORDERS}")
    if cfg.explicit_order is not None and sorted(cfg.explicit_order) != list(range(cfg.scenario.n_tasks)):
        raise ConfigError("order.explicit", "must be a permutation of all task ids")
    if cfg.eval_split not in ("validation", "test"):
        raise ConfigError("evaluation.split", "must be 'validation' or 'test'")
    if cfg.weighting is False and cfg.weighted_replay:
        raise ConfigError("weighting.weighted_replay", "needs weighting enabled")
    if cfg.strategy in ("fine_tune", "mtl") and cfg.weighting:
        raise ConfigError("weighting.enabled", f"{cfg.strategy} trains with a plain mean loss")


# (section, key) -> ExperimentConfig field
_FIELDS = {
    ("network", "hidden"): "hidden",
    ("network", "dropout"): "dropout",
    ("training", "strategy"): "strategy",
    ("training", "tau"): "tau",
    ("training", "batch_size"): "batch_size",
    ("training", "lr"): "lr",
    ("training", "seeds"): "seeds",
    ("weighting", "lambda"): "lam",
    ("weighting", "beta_lr"): "beta_lr",
    ("weighting", "beta_optimizer"): "beta_optimizer",
    ("weighting", "enabled"): "weighting",
    ("weighting", "weighted_replay"): "weighted_replay",
    ("weighting", "storage_variant"): "storage_variant",
    ("buffer", "b"): "b",
    ("buffer", "a"): "a",
    ("buffer", "T"): "T",
    ("buffer", "storage_order"): "storage_order",
    ("buffer", "tau_mc_offset"): "tau_mc_offset",
    ("buffer", "tau_s_offset"): "tau_s_offset",
    ("buffer", "replay_ratio"): "replay_ratio",
    ("buffer", "capacity"): "buffer_capacity",
    ("mir", "acq_fraction"): "mir_acq_fraction",
    ("mir", "replay_ratio"): "mir_replay_ratio",
    ("mir", "virtual_lr"): "mir_virtual_lr",
    ("order", "task_order"): "task_order",
    ("order", "permutation_seed"): "permutation_seed",
    ("order", "explicit"): "explicit_order",
    ("evaluation", "split"): "eval_split",
}
_TUPLE_FIELDS = {"hidden", "seeds", "explicit_order"}


def _parse_ratio(name: str, v: Any) -> float:
    """Accept ``1.0`` or ``"2:1"`` (replayed:current)."""
    if isinstance(v, str):
        try:
            num, den = (float(p) for p in v.split(":"))
            return num / den
        except (ValueError, ZeroDivisionError):
            raise ConfigError(name, f"cannot parse ratio {v!r}") from None
    return float(v)


def from_dict(doc: dict) -> ExperimentConfig:
    if doc.get("schema") != SCHEMA:
        raise ConfigError("schema", f"expected {SCHEMA!r}, got {doc.get('schema')!r}")
    known_sections = {s for s, _ in _FIELDS} | {"scenario", "schema"}
    for section in doc:
        if section not in known_sections:
            raise ConfigError(section, "unknown section")
    sc = dict(doc.get("scenario") or {})
    if "kind" not in sc:
        raise ConfigError("scenario.kind", "missing")
    if "task_noise" in sc:
        sc["task_noise"] = tuple(sc["task_noise"])
    try:
        scenario = ScenarioSpec(**sc)
    except TypeError as exc:
        raise ConfigError("scenario", str(exc)) from None
    except DataError as exc:
        raise ConfigError("scenario", str(exc)) from None

    kwargs: dict[str, Any] = {}
    for section, body in doc.items():
        if section in ("scenario", "schema"):
            continue
        if not isinstance(body, dict):
            raise ConfigError(section, "must be a table")
        for key, value in body.items():
            name = f"{section}.{key}"
            if (section, key) not in _FIELDS:
                raise ConfigError(name, "unknown key")
            attr = _FIELDS[(section, key)]
            if attr in _TUPLE_FIELDS:
                value = tuple(int(v) for v in value)
            elif attr in ("replay_ratio", "mir_replay_ratio"):
                value = _parse_ratio(name, value)
            kwargs[attr] = value
    return ExperimentConfig(scenario, **kwargs)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("file", f"{path}: {exc}") from None
    return from_dict(doc)

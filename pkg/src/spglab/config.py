"""Run configuration: a line-oriented key = value grammar with sections.

Grammar (also documented in the README):

* sections in square brackets: [task], [net], [replicas], [train];
* one `key = value` pair per line; `#` starts a comment (full-line or
  inline); blank lines are ignored;
* lists are comma-separated (dropout_rates = 0.2, 0.2, 0.2);
* unknown sections or keys are rejected with the offending name; malformed
  lines are rejected with their line number.

Every run echoes its fully-resolved configuration (defaults applied, seed
overrides folded in) next to its outputs, and the echo parses back to the
identical configuration.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

from .chain import VARIANT_DEPTH, VARIANT_DROPOUT, VARIANTS, ChainConfig
from .tasks import TaskSpec
from .trajectory import (TASK_CLASSIFICATION, TASK_KINDS, ReturnWeights,
                         default_return_weights)

SCHEDULE_CONSTANT = "constant"
SCHEDULE_STEP = "step"
SCHEDULES = (SCHEDULE_CONSTANT, SCHEDULE_STEP)

RETURN_WEIGHTED = "weighted"
RETURN_UNWEIGHTED = "unweighted"
RETURN_FORMS = (RETURN_WEIGHTED, RETURN_UNWEIGHTED)

OPTIMIZERS = ("sgd", "adamw")


class ConfigError(ValueError):
    """Raised for malformed configuration text or invalid values."""


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs: the task, the network width, the replica
    chain, and the optimization recipe."""

    task: TaskSpec
    hidden: int = 32
    seed: int = 1
    epochs: int = 10
    cold_start_epochs: int = 0
    optimizer: str = "adamw"
    lr: float = 1e-3
    weight_decay: float = 0.0
    schedule: str = SCHEDULE_CONSTANT
    schedule_factor: float = 0.5
    schedule_interval: int = 2
    batch_size: int = 64
    replicas: int = 0
    variant: str = VARIANT_DROPOUT
    dropout_rates: Tuple[float, ...] = ()
    blocks_per_module: int = 1
    return_weights: Tuple[float, ...] = ()
    return_form: str = RETURN_WEIGHTED
    replica_lr: Optional[float] = None
    baseline: Optional[str] = None

    def __post_init__(self):
        if self.hidden < 1:
            raise ConfigError("net hidden width must be positive")
        if self.epochs < 0 or self.cold_start_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.epochs < self.cold_start_epochs:
            raise ConfigError("epochs must be >= cold_start_epochs")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer '{self.optimizer}'")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule '{self.schedule}'")
        if self.schedule_interval < 1:
            raise ConfigError("schedule_interval must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.replicas < 0:
            raise ConfigError("replica count must be >= 0")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}'")
        if self.return_form not in RETURN_FORMS:
            raise ConfigError(f"unknown return_form '{self.return_form}'")
        if self.replica_lr is not None and self.replica_lr < 0:
            raise ConfigError("replica_lr must be >= 0")
        if self.variant == VARIANT_DROPOUT and self.replicas > 0:
            if len(self.dropout_rates) != self.replicas:
                raise ConfigError(
                    f"need {self.replicas} dropout_rates, got {len(self.dropout_rates)}")
        if not self.return_weights and self.replicas > 0:
            object.__setattr__(self, "return_weights",
                               default_return_weights(self.replicas).lambdas)
        if len(self.return_weights) not in (0, self.replicas):
            raise ConfigError(
                f"need {self.replicas} return_weights, got {len(self.return_weights)}")

    def chain_config(self) -> ChainConfig:
        return ChainConfig(
            replicas=self.replicas,
            variant=self.variant,
            hidden=self.hidden,
            classes=self.task.head_classes,
            dropout_rates=self.dropout_rates,
            blocks_per_module=self.blocks_per_module,
        )

    def weights(self) -> ReturnWeights:
        return ReturnWeights(self.return_weights)

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


_TASK_KEYS = {
    "kind": str, "seed": int, "train_samples": int, "val_samples": int,
    "test_samples": int, "noise": float, "classes": int, "input_dim": int,
    "height": int, "width": int, "shapes_per_image": int,
    "context_len": int, "vocab": int,
}
_NET_KEYS = {"hidden": int}
_REPLICA_KEYS = {
    "count": int, "variant": str, "dropout_rates": "floats",
    "blocks_per_module": int, "return_weights": "floats", "return_form": str,
}
_TRAIN_KEYS = {
    "seed": int, "epochs": int, "cold_start_epochs": int, "optimizer": str,
    "lr": float, "weight_decay": float, "schedule": str,
    "schedule_factor": float, "schedule_interval": int, "batch_size": int,
    "replica_lr": float, "baseline": str,
}
_SECTIONS = {"task": _TASK_KEYS, "net": _NET_KEYS,
             "replicas": _REPLICA_KEYS, "train": _TRAIN_KEYS}

_TASK_DEFAULTS = {"kind": TASK_CLASSIFICATION, "seed": "1",
                  "train_samples": "2000", "val_samples": "500",
                  "test_samples": "500"}
_TASK_NOISE_DEFAULTS = {TASK_CLASSIFICATION: "1.0", "segmentation": "0.3",
                        "language-modeling": "0.1"}

#: Per-subcommand defaults applied before construction; explicit keys win.
MODE_DEFAULTS: Dict[str, Dict[str, Dict[str, str]]] = {
    "baseline": {},
    "retrain": {
        "replicas": {"count": "3", "variant": VARIANT_DROPOUT,
                     "dropout_rates": "0.2, 0.2, 0.2",
                     "return_weights": "0.4, 0.2, 0.1"},
        "train": {"epochs": "11", "cold_start_epochs": "3", "lr": "0.0005",
                  "optimizer": "adamw", "schedule": SCHEDULE_CONSTANT},
    },
    "nas": {
        "replicas": {"count": "3", "variant": VARIANT_DEPTH,
                     "return_weights": "0.4, 0.2, 0.1"},
        "train": {"epochs": "11", "cold_start_epochs": "1", "lr": "0.0004",
                  "optimizer": "adamw", "schedule": SCHEDULE_STEP,
                  "schedule_factor": "0.5", "schedule_interval": "2"},
    },
}


def _coerce(section: str, key: str, raw: str, kind):
    try:
        if kind is str:
            return raw.strip()
        if kind is int:
            return int(raw.strip())
        if kind is float:
            return float(raw.strip())
        if kind == "floats":
            parts = [p.strip() for p in raw.split(",")]
            return tuple(float(p) for p in parts if p)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse value '{raw.strip()}'") from None
    raise ConfigError(f"internal: unknown key kind for [{section}] {key}")


def _parse_raw(text: str, source: str) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser(
        interpolation=None, delimiters=("=",),
        comment_prefixes=("#",), inline_comment_prefixes=("#",))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    raw: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}] "
                              f"(expected one of {sorted(_SECTIONS)})")
        keys = _SECTIONS[section]
        raw[section] = {}
        for key, value in parser.items(section):
            if key not in keys:
                raise ConfigError(f"unknown key '{key}' in section [{section}] "
                                  f"(expected one of {sorted(keys)})")
            raw[section][key] = value
    return raw


def parse_config(text: str, source: str = "<config>",
                 mode: Optional[str] = None) -> TrainConfig:
    """Parse configuration text into a TrainConfig. `mode` applies the
    defaults of one subcommand (baseline, retrain, nas); explicit keys
    always win over defaults."""
    raw = _parse_raw(text, source)
    if mode is not None:
        if mode not in MODE_DEFAULTS:
            raise ConfigError(f"unknown mode '{mode}'")
        for section, defaults in MODE_DEFAULTS[mode].items():
            bucket = raw.setdefault(section, {})
            for key, value in defaults.items():
                bucket.setdefault(key, value)

    task_raw = dict(_TASK_DEFAULTS)
    task_raw.update(raw.get("task", {}))
    kind = task_raw.get("kind", TASK_CLASSIFICATION).strip()
    if kind not in TASK_KINDS:
        raise ConfigError(f"[task] kind: unknown task '{kind}' "
                          f"(expected one of {TASK_KINDS})")
    task_raw.setdefault("noise", _TASK_NOISE_DEFAULTS[kind])
    task_kwargs = {}
    for key, value in task_raw.items():
        task_kwargs[key] = _coerce("task", key, value, _TASK_KEYS[key])
    try:
        task = TaskSpec(**task_kwargs)
    except ValueError as exc:
        raise ConfigError(f"[task]: {exc}") from exc

    kwargs = {"task": task}
    net_raw = raw.get("net", {})
    if "hidden" in net_raw:
        kwargs["hidden"] = _coerce("net", "hidden", net_raw["hidden"], int)

    rep_raw = raw.get("replicas", {})
    rep_map = {"count": "replicas", "variant": "variant",
               "dropout_rates": "dropout_rates",
               "blocks_per_module": "blocks_per_module",
               "return_weights": "return_weights", "return_form": "return_form"}
    for key, value in rep_raw.items():
        kwargs[rep_map[key]] = _coerce("replicas", key, value, _REPLICA_KEYS[key])

    train_raw = raw.get("train", {})
    for key, value in train_raw.items():
        kwargs[key] = _coerce("train", key, value, _TRAIN_KEYS[key])

    try:
        return TrainConfig(**kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str, mode: Optional[str] = None) -> TrainConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config '{path}': {exc}") from exc
    return parse_config(text, source=path, mode=mode)


def render_config(cfg: TrainConfig) -> str:
    """Canonical text form of a fully-resolved configuration; parsing it
    back yields an equal TrainConfig."""
    out = io.StringIO()
    task = cfg.task
    out.write("[task]\n")
    out.write(f"kind = {task.kind}\n")
    out.write(f"seed = {task.seed}\n")
    out.write(f"train_samples = {task.train_samples}\n")
    out.write(f"val_samples = {task.val_samples}\n")
    out.write(f"test_samples = {task.test_samples}\n")
    out.write(f"noise = {task.noise!r}\n")
    out.write(f"classes = {task.classes}\n")
    out.write(f"input_dim = {task.input_dim}\n")
    out.write(f"height = {task.height}\n")
    out.write(f"width = {task.width}\n")
    out.write(f"shapes_per_image = {task.shapes_per_image}\n")
    out.write(f"context_len = {task.context_len}\n")
    out.write(f"vocab = {task.vocab}\n")
    out.write("\n[net]\n")
    out.write(f"hidden = {cfg.hidden}\n")
    out.write("\n[replicas]\n")
    out.write(f"count = {cfg.replicas}\n")
    out.write(f"variant = {cfg.variant}\n")
    if cfg.variant == VARIANT_DROPOUT:
        out.write(f"dropout_rates = {', '.join(repr(r) for r in cfg.dropout_rates)}\n")
    else:
        out.write(f"blocks_per_module = {cfg.blocks_per_module}\n")
    out.write(f"return_weights = {', '.join(repr(w) for w in cfg.return_weights)}\n")
    out.write(f"return_form = {cfg.return_form}\n")
    out.write("\n[train]\n")
    out.write(f"seed = {cfg.seed}\n")
    out.write(f"epochs = {cfg.epochs}\n")
    out.write(f"cold_start_epochs = {cfg.cold_start_epochs}\n")
    out.write(f"optimizer = {cfg.optimizer}\n")
    out.write(f"lr = {cfg.lr!r}\n")
    out.write(f"weight_decay = {cfg.weight_decay!r}\n")
    out.write(f"schedule = {cfg.schedule}\n")
    out.write(f"schedule_factor = {cfg.schedule_factor!r}\n")
    out.write(f"schedule_interval = {cfg.schedule_interval}\n")
    out.write(f"batch_size = {cfg.batch_size}\n")
    if cfg.replica_lr is not None:
        out.write(f"replica_lr = {cfg.replica_lr!r}\n")
    if cfg.baseline is not None:
        out.write(f"baseline = {cfg.baseline}\n")
    return out.getvalue()

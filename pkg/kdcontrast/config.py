"""Training and objective hyperparameters, and the flat ``key = value`` file
they are read from.

Keys in a config file and in ``--set`` overrides share one namespace: the
field names of ``TrainConfig`` and ``ObjectiveConfig``.
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Union

from .exceptions import ConfigError, MarginOutOfRange, ThresholdOutOfRange
from .models import FilterOrientation, Objective, OptimizerKind


@dataclass(frozen=True)
class ObjectiveConfig:
    """Hyperparameters shared by the contrastive objectives.

    Defaults follow the reference setup: both temperatures 0.05, an angular
    margin of 0.125 rad and a threshold of 0.9.
    """

    tau: float = 0.05
    tau_prime: float = 0.05
    margin: float = 0.125
    threshold: float = 0.9
    sum_over_both_dropout_views: bool = True
    filter_orientation: FilterOrientation = FilterOrientation.EXCLUDE_SIMILAR
    use_threshold_filter: bool = True

    def __post_init__(self):
        if self.tau <= 0 or self.tau_prime <= 0:
            raise ConfigError("temperatures must be positive", key="tau")
        if self.margin < 0:
            raise MarginOutOfRange(f"margin must be non-negative, got {self.margin}")
        if not -1.0 <= self.threshold <= 1.0:
            raise ThresholdOutOfRange(f"threshold {self.threshold} outside [-1, 1]")
        object.__setattr__(self, "filter_orientation", FilterOrientation(self.filter_orientation))


SEED_LIMIT = 2 ** 64


@dataclass(frozen=True)
class TrainConfig:
    objective: Objective = Objective.KDMCSE
    batch_size: int = 64
    learning_rate: float = 1e-3
    steps: int = 1000
    eval_every: int = 125
    seed: int = 0
    optimizer: OptimizerKind = OptimizerKind.ADAM
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden_dim: int = 64
    grounded_dim: int = 32
    dropout_rate: float = 0.1
    init_scale: float = 0.1
    alignment_min_score: float = 4.0
    objective_config: ObjectiveConfig = field(default_factory=ObjectiveConfig)

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", key="batch_size")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1", key="eval_every")
        if not 0 <= self.seed < SEED_LIMIT:
            raise ConfigError(f"seed must be in [0, 2**64), got {self.seed}", key="seed")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0", key="steps")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive", key="learning_rate")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)", key="dropout_rate")
        if self.hidden_dim < 1 or self.grounded_dim < 1:
            raise ConfigError("dimensions must be positive", key="hidden_dim")


_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig) if f.name != "objective_config"}
_OBJECTIVE_KEYS = {f.name: f.type for f in fields(ObjectiveConfig)}
KNOWN_KEYS = sorted({**_TRAIN_KEYS, **_OBJECTIVE_KEYS})


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(key: str, kind, text: str):
    try:
        if kind is bool:
            return _parse_bool(text)
        return kind(text.strip())
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}", key=key) from e


def parse_assignments(lines: Iterable[str], source: str = "config") -> Dict[str, str]:
    """Read ``key = value`` lines, skipping blanks and ``#`` comments"""
    values: Dict[str, str] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _TRAIN_KEYS and key not in _OBJECTIVE_KEYS:
            raise ConfigError(f"{source}:{number}: unknown key {key!r}", key=key)
        values[key] = value
    return values


def build_config(values: Mapping[str, str], base: Optional[TrainConfig] = None) -> TrainConfig:
    """Apply string assignments on top of ``base`` (defaults if omitted)"""
    base = base or TrainConfig()
    train_updates = {}
    objective_updates = {}
    for key, text in values.items():
        if key in _TRAIN_KEYS:
            train_updates[key] = _coerce(key, _TRAIN_KEYS[key], text)
        elif key in _OBJECTIVE_KEYS:
            objective_updates[key] = _coerce(key, _OBJECTIVE_KEYS[key], text)
        else:
            raise ConfigError(f"unknown key {key!r}", key=key)
    objective_config = replace(base.objective_config, **objective_updates)
    return replace(base, objective_config=objective_config, **train_updates)


def load_config(
    path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = ()
) -> TrainConfig:
    """Read a config file, then apply ``KEY=VALUE`` overrides in order.

    An override is parsed exactly like a config file line, so passing a
    setting either way yields the same ``TrainConfig``.
    """
    values: Dict[str, str] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        values.update(parse_assignments(text.splitlines(), source=str(path)))
    values.update(parse_assignments(overrides, source="--set"))
    return build_config(values)

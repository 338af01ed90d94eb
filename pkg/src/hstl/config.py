"""Run configuration: a flat JSON object whose keys mirror :class:`RunConfig`.

Unknown keys are rejected so that a misspelt hyperparameter fails loudly
instead of silently falling back to its default. Per-flat-policy values
(``gamma_flat``, ``alpha_flat``, ``eps0_flat``, ``decay_flat``) accept either
one number for every flat policy or an object keyed by option label.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Union

from .options import OPTION_SET_MODES

PerFlat = Union[float, dict]

PATROL_FORMULA = "G[0,inf)(F[0,40) psiA & F[0,40) psiB & F[0,40) psiC)"
PATROL_ALIASES = {
    "psiA": "(x > 3) & (x < 9) & (y > 10) & (y < 14)",
    "psiB": "(x > 1) & (x < 5) & (y > 1) & (y < 5)",
    "psiC": "(x > 9) & (x < 13) & (y > 1) & (y < 7)",
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything that determines a training run. Defaults reproduce the patrol experiment."""

    formula: str = PATROL_FORMULA
    aliases: dict = field(default_factory=lambda: dict(PATROL_ALIASES))
    labels: list | None = None

    width: int = 15
    height: int = 15
    intent_prob: float = 0.7

    option_set_mode: str = "subsets-in-order"
    max_sequence_length: int | None = None
    explicit_options: list = field(default_factory=list)

    gamma_flat: PerFlat = 0.9
    alpha_flat: PerFlat = 0.2
    eps0_flat: PerFlat = 0.8
    decay_flat: PerFlat = 1e-6
    gamma_o: float = 0.9
    alpha_o: float = 0.5
    eps0_o: float = 0.8
    decay_o: float = 1e-4
    eps_floor: float = 0.1
    q0: float = 0.0
    discount_exponent: str = "remaining"

    episodes: int = 1200
    option_choices_per_episode: int = 200
    step_cap: int = 500
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.formula, str) or not self.formula.strip():
            raise ConfigError("formula must be a non-empty string")
        if not isinstance(self.aliases, dict) or not all(isinstance(v, str) for v in self.aliases.values()):
            raise ConfigError("aliases must map names to formula text")
        for name in ("width", "height", "episodes", "option_choices_per_episode", "step_cap"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        for name in ("intent_prob", "gamma_o", "alpha_o", "eps0_o", "eps_floor"):
            _check_unit(name, getattr(self, name))
        for name in ("gamma_flat", "alpha_flat", "eps0_flat"):
            for value in _values(getattr(self, name)):
                _check_unit(name, value)
        for name in ("decay_flat", "decay_o"):
            for value in _values(getattr(self, name)):
                if not isinstance(value, (int, float)) or value < 0:
                    raise ConfigError(f"{name} must be non-negative, got {value!r}")
        for value in [self.eps0_o, *_values(self.eps0_flat)]:
            if value < self.eps_floor:
                raise ConfigError(f"initial exploration rate {value} is below eps_floor {self.eps_floor}")
        if self.option_set_mode not in OPTION_SET_MODES:
            raise ConfigError(f"option_set_mode must be one of {OPTION_SET_MODES}")
        if self.max_sequence_length is not None and self.max_sequence_length < 1:
            raise ConfigError("max_sequence_length must be at least 1")
        if self.discount_exponent not in ("remaining", "total"):
            raise ConfigError("discount_exponent must be 'remaining' or 'total'")

    def per_flat(self, name: str, labels: list[str]) -> list[float]:
        value = getattr(self, name)
        if isinstance(value, dict):
            missing = [label for label in labels if label not in value]
            extra = [key for key in value if key not in labels]
            if missing or extra:
                raise ConfigError(f"{name}: missing labels {missing}, unknown labels {extra}")
            return [float(value[label]) for label in labels]
        return [float(value)] * len(labels)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**dict(data))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **changes})

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _values(value):
    return list(value.values()) if isinstance(value, dict) else [value]


def _check_unit(name, value):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return RunConfig.from_dict(data)


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")

"""Task and learning-loop configuration.

Configuration files hold one ``key=value`` pair per line; ``#`` starts a
comment and blank lines are ignored.

Typical usage::

    config = load_config("runs/pendulum.cfg")
    config = config.with_overrides({"seed": 11})
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

from composite_learning.errors import CompositeLearningError


logger = logging.getLogger(__name__)


class ConfigError(CompositeLearningError):
    """Raised for unknown keys or malformed values; carries the 1-based line number"""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none") else float(text)


def _optional_str(text: str) -> Optional[str]:
    return None if text.strip().lower() in ("", "none") else text.strip()


@dataclass(frozen=True)
class LoopConfig:
    task: str = "pendulum"
    skill: Optional[str] = None
    seed: int = 7
    noise: float = 2.0
    noise_ramp: bool = True
    demo_count: int = 10
    corpus: str = "back-and-forth"
    trial_budget: int = 200
    window: int = 10
    success_target: float = 0.8
    time_budget: float = 10.0
    frame_rate: float = 30.0
    frame_delay: int = 1
    measurement_noise: float = 0.002
    kappa: Optional[float] = None
    lambda_floor: Optional[float] = None
    problem_threshold: float = 0.4
    cond_ceiling: float = 1e4
    max_subset: int = 50
    max_candidates: int = 400
    sample_stride: int = 20
    policy_jitter: float = 1e-6
    reweight_rate: float = 0.5

    def __post_init__(self) -> None:
        checks = [
            (self.seed >= 0, "seed must be non-negative"),
            (self.noise >= 0, "noise must be non-negative"),
            (self.demo_count >= 1, "demo_count must be at least 1"),
            (self.trial_budget >= 1, "trial_budget must be at least 1"),
            (self.window >= 1, "window must be at least 1"),
            (0.0 < self.success_target <= 1.0, "success_target must lie in (0, 1]"),
            (self.time_budget > 0, "time_budget must be positive"),
            (self.frame_rate > 0, "frame_rate must be positive"),
            (self.frame_delay >= 0, "frame_delay must be non-negative"),
            (self.measurement_noise >= 0, "measurement_noise must be non-negative"),
            (self.kappa is None or 0.0 < self.kappa < 1.0, "kappa must lie in (0, 1)"),
            (
                self.lambda_floor is None or 0.0 < self.lambda_floor < 1.0,
                "lambda_floor must lie in (0, 1)",
            ),
            (0.0 <= self.problem_threshold <= 1.0, "problem_threshold must lie in [0, 1]"),
            (self.cond_ceiling > 1.0, "cond_ceiling must exceed 1"),
            (self.max_subset >= 1, "max_subset must be at least 1"),
            (self.max_candidates >= self.max_subset, "max_candidates must be >= max_subset"),
            (self.sample_stride >= 1, "sample_stride must be at least 1"),
            (self.policy_jitter >= 0, "policy_jitter must be non-negative"),
            (0.0 <= self.reweight_rate <= 1.0, "reweight_rate must lie in [0, 1]"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "LoopConfig":
        unknown = set(values) - set(_CONVERTERS)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        defaults = cls()
        return cls(**{f.name: values.get(f.name, getattr(defaults, f.name)) for f in fields(cls)})

    def with_overrides(self, overrides: Dict[str, Any]) -> "LoopConfig":
        """Replace the entries of ``overrides`` whose value is not ``None``."""

        present = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(present) - set(_CONVERTERS)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        return replace(self, **present)

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


_CONVERTERS: Dict[str, Callable[[str], Any]] = {
    "task": str,
    "skill": _optional_str,
    "seed": int,
    "noise": float,
    "noise_ramp": _parse_bool,
    "demo_count": int,
    "corpus": str,
    "trial_budget": int,
    "window": int,
    "success_target": float,
    "time_budget": float,
    "frame_rate": float,
    "frame_delay": int,
    "measurement_noise": float,
    "kappa": _optional_float,
    "lambda_floor": _optional_float,
    "problem_threshold": float,
    "cond_ceiling": float,
    "max_subset": int,
    "max_candidates": int,
    "sample_stride": int,
    "policy_jitter": float,
    "reweight_rate": float,
}


def parse_config(text: str) -> LoopConfig:
    values: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"expected key=value, got {line!r}", number)
        if key not in _CONVERTERS:
            raise ConfigError(f"unknown key {key!r}", number)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", number)
        try:
            values[key] = _CONVERTERS[key](value.strip())
        except ValueError:
            raise ConfigError(f"invalid value for {key}: {value.strip()!r}", number) from None
    return LoopConfig.from_dict(values)


def format_config(config: LoopConfig) -> str:
    lines = []
    for key, value in config.as_dict().items():
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def load_config(path: Union[str, Path]) -> LoopConfig:
    config = parse_config(Path(path).read_text())
    logger.debug("Loaded configuration from %s", path)
    return config

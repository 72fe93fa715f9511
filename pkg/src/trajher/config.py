"""Run configuration: one frozen dataclass per section, serialised as flat
``section.key = value`` text.

Example::

    # comments and blank lines are ignored
    env.v_max = 0.4
    agent.hidden_sizes = 64,64,64
    dr.push_gain = 0.8,1.2
    train.stage1_epochs = 200
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .agent import AgentConfig, ExplorationConfig
from .env import DRConfig, EnvParams
from .errors import ConfigurationError
from .replay import HerConfig


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    stage1_epochs: int = 200
    warmup_epochs: int = 3
    stage2_epochs: int = 100
    cycles_per_epoch: int = 50
    rollouts_per_cycle: int = 2
    updates_per_cycle: int = 40
    eval_episodes: int = 10
    store_eval_episodes: bool = True
    success_threshold: float = 0.9
    converge_window: int = 5
    converge_delta: float = 0.02
    buffer_capacity: int = 10_000
    d_xy: float = 0.39
    d_z: float = 0.27
    wall_clock: bool = True

    def validate(self) -> None:
        positive = ("stage1_epochs", "cycles_per_epoch", "rollouts_per_cycle",
                    "converge_window", "buffer_capacity", "d_xy", "d_z")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"train.{name} must be positive")
        for name in ("warmup_epochs", "stage2_epochs", "updates_per_cycle", "eval_episodes"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"train.{name} must be >= 0")
        if not 0.0 <= self.success_threshold <= 1.0:
            raise ConfigurationError("train.success_threshold must lie in [0, 1]")
        if self.converge_delta < 0:
            raise ConfigurationError("train.converge_delta must be >= 0")


SECTIONS = {
    "env": EnvParams,
    "dr": DRConfig,
    "her": HerConfig,
    "agent": AgentConfig,
    "explore": ExplorationConfig,
    "train": TrainConfig,
}

PRESETS = {
    "final": {"her.reward_mode": "full", "her.relabel_z": False},
    "her-both": {"her.reward_mode": "full", "her.relabel_z": True},
    "her-standard": {"her.reward_mode": "sparse", "her.relabel_z": True},
    "push-only": {"her.reward_mode": "push_only", "her.relabel_z": False},
}


@dataclass(frozen=True)
class Config:
    env: EnvParams = EnvParams()
    dr: DRConfig = DRConfig(enabled=True)
    her: HerConfig = HerConfig()
    agent: AgentConfig = AgentConfig()
    explore: ExplorationConfig = ExplorationConfig()
    train: TrainConfig = TrainConfig()

    def validate(self) -> None:
        for name in SECTIONS:
            getattr(self, name).validate()

    def with_overrides(self, overrides: dict) -> "Config":
        """Apply ``{"section.key": value}``; string values are parsed."""
        cfg = self
        for dotted, value in overrides.items():
            section, key = _split_key(dotted)
            part = getattr(cfg, section)
            current = getattr(part, key)
            if isinstance(value, str):
                value = _parse_value(value, current, dotted)
            cfg = replace(cfg, **{section: replace(part, **{key: value})})
        return cfg

    def with_preset(self, name: str) -> "Config":
        if name not in PRESETS:
            raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
        return self.with_overrides(PRESETS[name])

    def dump(self) -> str:
        lines = []
        for section in SECTIONS:
            part = getattr(self, section)
            for f in fields(part):
                lines.append(f"{section}.{f.name} = {_format_value(getattr(part, f.name))}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()


def _split_key(dotted: str) -> tuple[str, str]:
    section, _, key = dotted.partition(".")
    if section not in SECTIONS or not key:
        raise ConfigurationError(f"unknown config key {dotted!r}")
    if key not in {f.name for f in fields(SECTIONS[section])}:
        raise ConfigurationError(f"unknown config key {dotted!r}")
    return section, key


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str, like, key: str):
    text = text.strip()
    try:
        if isinstance(like, bool):
            lowered = text.lower()
            if lowered not in ("true", "false"):
                raise ValueError(f"expected true or false, got {text!r}")
            return lowered == "true"
        if isinstance(like, tuple):
            kind = type(like[0]) if like else float
            parts = [p for p in text.split(",") if p.strip()]
            if not parts:
                raise ValueError("empty list")
            return tuple(kind(p.strip()) for p in parts)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {exc}") from exc


def parse_config(text: str, source: str = "<config>", base: Config | None = None) -> Config:
    """Parse key=value text on top of ``base`` (defaults when omitted)."""
    cfg = base or Config()
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigurationError(f"{where}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigurationError(f"{where}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        try:
            cfg = cfg.with_overrides({key: value})
        except ConfigurationError as exc:
            raise ConfigurationError(f"{where}: {exc}") from exc
    try:
        cfg.validate()
    except ConfigurationError as exc:
        # point at the line that set the offending key when there is one
        lines = [n for key, n in seen.items() if key in str(exc)]
        where = f"{source}:{min(lines)}" if lines else source
        raise ConfigurationError(f"{where}: {exc}") from exc
    return cfg


def load_config(path: str | Path) -> Config:
    path = Path(path)
    return parse_config(path.read_text(), str(path))

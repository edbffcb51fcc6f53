"""Flat ``key=value`` configuration files and the training settings."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from ..channel import ConfigError, ScenarioConfig
from ..network import ArchConfig

__all__ = ["TrainConfig", "parse_config_text", "load_config", "scenario_from", "arch_from", "train_from"]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    learning_rate: float = 1e-3
    iterations: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 50
    # samples per reverse pass; the batch gradient is accumulated over chunks
    chunk_size: int = 8
    deterministic: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.iterations < 0 or self.eval_every < 1 or self.chunk_size < 1:
            raise ConfigError("iterations, eval_every and chunk_size must be positive")


def _coerce(value: str, default):
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.replace(",", " ").split())
    return value


def parse_config_text(text: str) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


_ALIASES = {"σ²": "sigma2", "sigma^2": "sigma2", "E_tr": "E_Tr"}


def _build(cls, raw: dict[str, str], **overrides):
    kwargs = {}
    names = {f.name: f for f in fields(cls)}
    defaults = cls()
    for key, value in raw.items():
        key = _ALIASES.get(key, key)
        if key in names:
            kwargs[key] = _coerce(value, getattr(defaults, key))
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**kwargs)


def scenario_from(raw: dict[str, str], **overrides) -> ScenarioConfig:
    raw = dict(raw)
    if "N" not in raw and "ris_rows" in raw and "ris_cols" in raw:
        raw["N"] = str(int(raw["ris_rows"]) * int(raw["ris_cols"]))
    return _build(ScenarioConfig, raw, **overrides)


def arch_from(raw: dict[str, str], scenario: ScenarioConfig | None = None, **overrides) -> ArchConfig:
    raw = dict(raw)
    if scenario is not None and "grid" not in raw:
        overrides.setdefault("grid", (scenario.ris_rows, scenario.ris_cols))
    mode = overrides.get("csi_mode") or raw.get("csi_mode", "full")
    if mode == "partial" and "expansion_layers" not in raw:
        overrides.setdefault("expansion_layers", (3, 6))
    return _build(ArchConfig, raw, **overrides)


def train_from(raw: dict[str, str], **overrides) -> TrainConfig:
    return _build(TrainConfig, raw, **overrides)

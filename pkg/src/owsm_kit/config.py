"""Pipeline configuration: built-in defaults < config file < command-line flags."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .presets import get_preset

logger = logging.getLogger(__name__)

SEED_ENV = "OWSM_KIT_SEED"


class ConfigError(ValueError):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None


@dataclass(frozen=True)
class PipelineConfig:
    manifest: str | None = None
    vocab: str | None = None
    bpe_model: str | None = None
    cmvn: str | None = None
    shard_dir: str | None = None
    max_duration: float = 30.0
    max_tokens: int = 600
    n_shards: int = 5
    shard_policy: str = "round_robin"
    beam_size: int = 10
    ctc_weight: float = 0.3
    max_len: int = 448
    n_best: int = 1
    time_reduction: int = 4
    validation_fraction: float = 0.1
    max_prompt_tokens: int = 200
    seed: int = 0
    preset: str = "v3"

    def validate(self) -> "PipelineConfig":
        def need(cond: bool, msg: str):
            if not cond:
                raise ConfigError(msg)

        need(0 < self.max_duration <= 30.0, f"max_duration must be in (0, 30], got {self.max_duration}")
        need(self.max_tokens >= 1, "max_tokens must be >= 1")
        need(self.n_shards >= 1, "n_shards must be >= 1")
        need(self.shard_policy in ("round_robin", "hash"), f"unknown shard_policy {self.shard_policy!r}")
        need(self.beam_size >= 1, "beam_size must be >= 1")
        need(0.0 <= self.ctc_weight <= 1.0, "ctc_weight must be in [0, 1]")
        need(self.max_len >= 1, "max_len must be >= 1")
        need(self.n_best >= 1, "n_best must be >= 1")
        need(self.time_reduction in (1, 2, 4), "time_reduction must be 1, 2 or 4")
        need(0.0 < self.validation_fraction <= 1.0, "validation_fraction must be in (0, 1]")
        need(self.max_prompt_tokens >= 0, "max_prompt_tokens must be >= 0")
        try:
            preset = get_preset(self.preset)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if not 5 <= self.n_shards <= 12:
            logger.warning("n_shards=%d is outside the usual range 5-12", self.n_shards)
        if preset.time_reduction != self.time_reduction:
            logger.warning(
                "time_reduction=%d differs from preset %s (%d ms frames)",
                self.time_reduction, self.preset, preset.time_resolution_ms,
            )
        return self


FIELD_NAMES = {f.name for f in fields(PipelineConfig)}


def load_config_file(path: str | Path) -> dict[str, Any]:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a flat key-value mapping")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = set(data) - FIELD_NAMES
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    for k, v in data.items():
        if isinstance(v, (dict, list)):
            raise ConfigError(f"{path}: key {k!r} must be a scalar")
    return data


def resolve_config(flags: Mapping[str, Any], config_file: str | Path | None = None) -> PipelineConfig:
    """Merge layers; ``None`` flag values mean "not given"."""
    values: dict[str, Any] = {"seed": default_seed()}
    if config_file is not None:
        values.update(load_config_file(config_file))
    values.update({k: v for k, v in flags.items() if k in FIELD_NAMES and v is not None})
    for f in fields(PipelineConfig):
        kind = type(f.default)
        if f.name in values and kind in (int, float) and values[f.name] is not None:
            try:
                values[f.name] = kind(values[f.name])
            except (TypeError, ValueError):
                raise ConfigError(f"{f.name} must be {kind.__name__}, got {values[f.name]!r}") from None
    return PipelineConfig(**values).validate()

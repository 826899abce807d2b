"""Model configuration presets, kept for validation and documentation only."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int
    layers: int
    attention_heads: int
    time_resolution_ms: int
    parameters_m: int
    bpe_vocab_size: int
    languages: int

    @property
    def time_reduction(self) -> int:
        """Frame stacking factor relative to the 10 ms feature hop."""
        return self.time_resolution_ms // 10


PRESETS = {
    "v1": ModelConfig(768, 12, 12, 20, 272, 20_000, 22),
    "v2": ModelConfig(1024, 18, 16, 40, 712, 50_000, 23),
    "v3": ModelConfig(1024, 24, 16, 40, 889, 50_000, 151),
}


def get_preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}") from None

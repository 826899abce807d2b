"""Next-token scorers standing in for the attention decoder."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np
from scipy.special import logsumexp

from .lattice import NORM_TOL


class StepScorer(Protocol):
    """Maps a token prefix (including forced context) to next-token log probs.

    Implementations must be deterministic and safe for concurrent reads.
    """

    vocab_size: int

    def __call__(self, prefix: Sequence[int]) -> np.ndarray: ...


def _check_row(row, vocab_size: int | None = None) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or (vocab_size is not None and len(row) != vocab_size):
        raise ValueError(f"score row has shape {row.shape}, expected ({vocab_size},)")
    err = abs(logsumexp(row))
    if err > NORM_TOL:
        raise ValueError(f"score row not normalized (|logsumexp| = {err:.2e})")
    return row


def log_normalize(row) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64)
    return row - logsumexp(row)


class TableScorer:
    """Lookup-table scorer keyed by the space-joined prefix ids.

    If ``strip_through`` is set, only the ids after the last occurrence of
    that id (normally ``<sos>``) form the key, so a table stays valid when a
    prompt is prepended.  Unlisted prefixes get ``fallback``.
    """

    def __init__(self, table: Mapping[str, Sequence[float]], fallback: Sequence[float], strip_through: int | None = None):
        self.fallback = _check_row(fallback)
        self.vocab_size = len(self.fallback)
        self.table = {k: _check_row(v, self.vocab_size) for k, v in table.items()}
        self.strip_through = strip_through

    def key(self, prefix: Sequence[int]) -> str:
        prefix = list(prefix)
        if self.strip_through is not None and self.strip_through in prefix:
            cut = len(prefix) - 1 - prefix[::-1].index(self.strip_through)
            prefix = prefix[cut + 1 :]
        return " ".join(str(i) for i in prefix)

    def __call__(self, prefix: Sequence[int]) -> np.ndarray:
        return self.table.get(self.key(prefix), self.fallback)

    @classmethod
    def from_json(cls, obj: dict) -> "TableScorer":
        def row(v):
            return [x if x is not None and x > -1e30 else -np.inf for x in v]

        return cls({k: row(v) for k, v in obj["table"].items()}, row(obj["fallback"]), obj.get("strip_through"))

    def to_json(self) -> dict:
        def row(v):
            return [float(x) if np.isfinite(x) else -1e30 for x in v]

        return {
            "table": {k: row(v) for k, v in self.table.items()},
            "fallback": row(self.fallback),
            "strip_through": self.strip_through,
        }

    @classmethod
    def load(cls, path: str | Path) -> "TableScorer":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def peaked_row(vocab_size: int, token: int, peak: float = 0.9) -> np.ndarray:
    p = np.full(vocab_size, (1.0 - peak) / (vocab_size - 1))
    p[token] = peak
    return np.log(p)


def scripted_scorer(
    script: Sequence[int], vocab_size: int, eos_id: int, strip_through: int | None = None, peak: float = 0.9
) -> TableScorer:
    """Scorer whose greedy path emits ``script`` then ``eos_id``.

    Keys are relative to the forced context: with ``strip_through`` set they
    start after that id, otherwise the caller's prefix must be empty-context.
    """
    table = {}
    for i in range(len(script) + 1):
        key = " ".join(str(t) for t in script[:i])
        nxt = script[i] if i < len(script) else eos_id
        table[key] = peaked_row(vocab_size, nxt, peak)
    return TableScorer(table, peaked_row(vocab_size, eos_id, peak), strip_through)


class RandomScorer:
    """Deterministic pseudo-random scorer: each prefix seeds its own row."""

    def __init__(self, vocab_size: int, seed: int = 0, temperature: float = 1.0):
        self.vocab_size = vocab_size
        self.seed = seed
        self.temperature = temperature

    def __call__(self, prefix: Sequence[int]) -> np.ndarray:
        rng = np.random.default_rng([self.seed, len(prefix), *[int(t) for t in prefix]])
        return log_normalize(rng.normal(size=self.vocab_size) / self.temperature)

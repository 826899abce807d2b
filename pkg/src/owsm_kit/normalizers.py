"""Simplified text normalizers for scoring.

``basic``: lowercase, replace punctuation and symbols with spaces (keeping
apostrophes between two letters or digits), collapse whitespace.
``english``: ``basic`` followed by word-level replacements from a mapping
table (contractions, spelling variants, number words).  The table shipped in
``data/english.json`` approximates common English scoring conventions and is
meant to be edited.
"""

from __future__ import annotations

import json
import re
import unicodedata
from functools import lru_cache
from importlib import resources
from pathlib import Path

_INTRAWORD_APOSTROPHE = re.compile(r"(?<=[^\W_])'(?=[^\W_])")


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PS"


def basic_normalize(text: str) -> str:
    text = text.lower()
    keep = {m.start() for m in _INTRAWORD_APOSTROPHE.finditer(text)}
    chars = [" " if _is_punct(ch) and i not in keep else ch for i, ch in enumerate(text)]
    return " ".join("".join(chars).split())


def load_english_table(path: str | Path | None = None) -> dict[str, str]:
    if path is None:
        raw = resources.files("owsm_kit.data").joinpath("english.json").read_text(encoding="utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    table = {basic_normalize(k): basic_normalize(v) for k, v in json.loads(raw).items()}
    # replacements must be fixed points, otherwise normalization is not idempotent
    for k, v in table.items():
        clash = [w for w in v.split() if w in table]
        if clash:
            raise ValueError(f"english table: replacement for {k!r} contains mapped word(s) {clash}")
        if " " in k:
            raise ValueError(f"english table keys must be single words, got {k!r}")
    return table


@lru_cache(maxsize=None)
def _default_table() -> dict[str, str]:
    return load_english_table()


def english_normalize(text: str, table: dict[str, str] | None = None) -> str:
    table = _default_table() if table is None else table
    words = basic_normalize(text).split()
    return " ".join(table.get(w, w) for w in words)


def normalize_text(text: str, mode: str = "basic", table: dict[str, str] | None = None) -> str:
    if mode == "basic":
        return basic_normalize(text)
    if mode == "english":
        return english_normalize(text, table)
    if mode == "none":
        return text
    raise ValueError(f"unknown normalizer {mode!r}")

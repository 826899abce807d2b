"""Minimal byte-pair-encoding trainer and encoder.

Text is pre-tokenized by mapping spaces to ``▁`` and splitting before every
``▁``, so merges never cross word boundaries.  Pieces are ordered: the sorted
character inventory first, then merged pieces in the order they were learned.
The position of a multi-character piece is its merge rank.
"""

from __future__ import annotations

import logging
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

SPACE = "▁"


class BpeError(ValueError):
    pass


class EncodingError(BpeError):
    """Text contains characters with no piece; ``span`` is (start, end) in the text."""

    def __init__(self, message: str, span: tuple[int, int]):
        super().__init__(message)
        self.span = span


def split_words(text: str) -> list[str]:
    if SPACE in text:
        i = text.index(SPACE)
        raise EncodingError(f"text contains reserved character {SPACE!r} at {i}", (i, i + 1))
    marked = text.replace(" ", SPACE)
    words, start = [], 0
    for i, ch in enumerate(marked):
        if ch == SPACE and i > start:
            words.append(marked[start:i])
            start = i
    if start < len(marked):
        words.append(marked[start:])
    return words


def _pair_counts(vocab: dict[tuple[str, ...], int]) -> Counter:
    pairs: Counter = Counter()
    for word, freq in vocab.items():
        for a, b in zip(word, word[1:]):
            pairs[a, b] += freq
    return pairs


def _merge_word(word: tuple[str, ...], a: str, b: str) -> tuple[str, ...]:
    out, i = [], 0
    while i < len(word):
        if i + 1 < len(word) and word[i] == a and word[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def char_inventory(texts: Iterable[str]) -> list[str]:
    chars: set[str] = set()
    for text in texts:
        for word in split_words(text):
            chars.update(word)
    return sorted(chars)


def train_bpe(texts: Sequence[str], target_vocab_size: int) -> list[str]:
    """Learn pieces until ``target_vocab_size`` pieces exist.

    Each step merges the most frequent adjacent pair (overlapping occurrences
    counted); ties go to the lexicographically smallest pair.  Training stops
    early, with a warning, once no pair is left to merge.
    """
    if not texts:
        raise BpeError("no training texts")
    word_freq: Counter = Counter()
    for text in texts:
        word_freq.update(split_words(text))
    pieces = char_inventory(texts)
    if target_vocab_size < len(pieces):
        raise BpeError(
            f"target vocabulary size {target_vocab_size} is smaller than "
            f"the character inventory ({len(pieces)})"
        )
    known = set(pieces)
    vocab = {tuple(w): f for w, f in word_freq.items()}
    while len(pieces) < target_vocab_size:
        pairs = _pair_counts(vocab)
        if not pairs:
            logger.warning("BPE stopped at %d pieces: nothing left to merge", len(pieces))
            break
        best = max(pairs.values())
        a, b = min(p for p, c in pairs.items() if c == best)
        vocab = {_merge_word(w, a, b): f for w, f in vocab.items()}
        # a merge can rebuild an existing piece from a different split
        if a + b not in known:
            known.add(a + b)
            pieces.append(a + b)
    return pieces


class BpeModel:
    """Encoder over an ordered piece list.

    Encoding repeatedly merges the adjacent pair whose concatenation is the
    lowest-ranked piece (leftmost on ties), which needs only the pieces.
    """

    def __init__(self, pieces: Sequence[str]):
        if not pieces:
            raise BpeError("empty piece list")
        seen: set[str] = set()
        for p in pieces:
            if p in seen:
                raise BpeError(f"duplicate piece {p!r}")
            if not p:
                raise BpeError("empty piece")
            seen.add(p)
        self.pieces = list(pieces)
        self.rank = {p: i for i, p in enumerate(self.pieces)}

    def _encode_word(self, word: str, offset: int, text: str) -> list[str]:
        parts = list(word)
        for j, ch in enumerate(parts):
            if ch not in self.rank:
                pos = offset + j
                raise EncodingError(
                    f"no piece for character {text[pos]!r} at position {pos}", (pos, pos + 1)
                )
        while len(parts) > 1:
            best_i, best_rank = -1, None
            for i in range(len(parts) - 1):
                r = self.rank.get(parts[i] + parts[i + 1])
                if r is not None and (best_rank is None or r < best_rank):
                    best_i, best_rank = i, r
            if best_i < 0:
                break
            parts[best_i : best_i + 2] = [parts[best_i] + parts[best_i + 1]]
        return parts

    def encode(self, text: str) -> list[str]:
        out: list[str] = []
        offset = 0
        for word in split_words(text):
            out.extend(self._encode_word(word, offset, text))
            offset += len(word)
        return out

    @staticmethod
    def decode(pieces: Iterable[str]) -> str:
        return "".join(pieces).replace(SPACE, " ")

    def save(self, path: str | Path) -> None:
        from .io import atomic_write_text

        atomic_write_text(path, "".join(p + "\n" for p in self.pieces))

    @classmethod
    def load(cls, path: str | Path) -> "BpeModel":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)

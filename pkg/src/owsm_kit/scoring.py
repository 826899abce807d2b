"""Error rates, corpus BLEU and language-identification accuracy."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .normalizers import basic_normalize


@dataclass(frozen=True)
class EditAlignment:
    substitutions: int
    insertions: int
    deletions: int
    hits: int

    @property
    def ref_len(self) -> int:
        return self.substitutions + self.deletions + self.hits

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def __add__(self, other: "EditAlignment") -> "EditAlignment":
        return EditAlignment(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.hits + other.hits,
        )

    @property
    def rate(self) -> float:
        if self.ref_len == 0:
            raise ValueError("error rate undefined for an empty reference")
        return self.errors / self.ref_len


def align(ref: Sequence, hyp: Sequence) -> EditAlignment:
    """Minimum edit distance alignment; among optimal paths prefer hits, then substitutions."""
    n, m = len(ref), len(hyp)
    # cost[i][j] = (errors, -hits) so ties favour more hits
    prev = [(j, 0) for j in range(m + 1)]
    back: list[list[str]] = [["I"] * (m + 1)]
    back[0][0] = ""
    for i in range(1, n + 1):
        cur = [(i, 0)] + [(0, 0)] * m
        row = ["D"] + [""] * m
        for j in range(1, m + 1):
            if ref[i - 1] == hyp[j - 1]:
                diag = (prev[j - 1][0], prev[j - 1][1] - 1)
                op_d = "H"
            else:
                diag = (prev[j - 1][0] + 1, prev[j - 1][1])
                op_d = "S"
            best, op = diag, op_d
            dele = (prev[j][0] + 1, prev[j][1])
            if dele < best:
                best, op = dele, "D"
            ins = (cur[j - 1][0] + 1, cur[j - 1][1])
            if ins < best:
                best, op = ins, "I"
            cur[j] = best
            row[j] = op
        back.append(row)
        prev = cur
    counts = Counter()
    i, j = n, m
    while i > 0 or j > 0:
        op = back[i][j]
        counts[op] += 1
        if op in ("H", "S"):
            i, j = i - 1, j - 1
        elif op == "D":
            i -= 1
        else:
            j -= 1
    return EditAlignment(counts["S"], counts["I"], counts["D"], counts["H"])


def edit_distance(a: Sequence, b: Sequence) -> int:
    return align(a, b).errors


def word_error_rate(ref: str, hyp: str) -> tuple[float, EditAlignment]:
    words = ref.split()
    if not words:
        raise ValueError("empty reference")
    a = align(words, hyp.split())
    return a.rate, a


def _chars(text: str) -> list[str]:
    return [c for c in text if not c.isspace()]


def char_error_rate(ref: str, hyp: str) -> tuple[float, EditAlignment]:
    """Edit distance over characters; whitespace is ignored on both sides."""
    chars = _chars(ref)
    if not chars:
        raise ValueError("empty reference")
    a = align(chars, _chars(hyp))
    return a.rate, a


@dataclass(frozen=True)
class BleuStats:
    matches: tuple[int, ...]
    totals: tuple[int, ...]
    hyp_len: int
    ref_len: int

    @property
    def precisions(self) -> list[float]:
        return [m / t if t else 0.0 for m, t in zip(self.matches, self.totals)]

    @property
    def brevity_penalty(self) -> float:
        if self.hyp_len == 0:
            return 0.0
        if self.hyp_len > self.ref_len:
            return 1.0
        return math.exp(1.0 - self.ref_len / self.hyp_len)

    @property
    def score(self) -> float:
        if any(m == 0 for m in self.matches):
            return 0.0
        logp = sum(math.log(p) for p in self.precisions) / len(self.matches)
        return 100.0 * self.brevity_penalty * math.exp(logp)


def _ngrams(words: list[str], n: int) -> Counter:
    return Counter(tuple(words[i : i + n]) for i in range(len(words) - n + 1))


def bleu_stats(refs: Sequence[str], hyps: Sequence[str], max_n: int = 4) -> BleuStats:
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    if not refs:
        raise ValueError("need at least one sentence pair")
    matches, totals = [0] * max_n, [0] * max_n
    hyp_len = ref_len = 0
    for ref, hyp in zip(refs, hyps):
        r, h = basic_normalize(ref).split(), basic_normalize(hyp).split()
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return BleuStats(tuple(matches), tuple(totals), hyp_len, ref_len)


def corpus_bleu(refs: Sequence[str], hyps: Sequence[str], max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100] without smoothing; any zero n-gram precision gives 0."""
    return bleu_stats(refs, hyps, max_n).score


def lid_accuracy(refs: Sequence[str], predicted: Sequence[str]) -> float:
    if len(refs) != len(predicted):
        raise ValueError(f"{len(refs)} references vs {len(predicted)} predictions")
    if not refs:
        raise ValueError("no utterances")
    return sum(r == p for r, p in zip(refs, predicted)) / len(refs)

"""Long-form training data preparation.

Consecutive utterances of one talk are packed greedily into windows of at
most 30 s, the windows are encoded and length-filtered, then split into
disjoint shards for independent data iterators.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from .tokens import (
    MAX_SECONDS,
    MultitaskRecord,
    Segment,
    TokenFormatError,
    Vocabulary,
    encode_record,
    snap,
)

logger = logging.getLogger(__name__)

SHARD_RANGE = (5, 12)


@dataclass(frozen=True)
class UtteranceSegment:
    talk_id: str
    start: float
    end: float
    text: str
    language: str
    translations: dict[str, str] | None = None
    id: str | None = None
    corpus: str | None = None

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"segment {self.id or self.talk_id}: need 0 <= start < end, got {self.start}, {self.end}")

    @classmethod
    def from_json(cls, obj: dict) -> "UtteranceSegment":
        return cls(
            talk_id=str(obj["talk_id"]),
            start=float(obj["start"]),
            end=float(obj["end"]),
            text=obj["text"],
            language=obj["language"],
            translations=obj.get("translations"),
            id=obj.get("id"),
            corpus=obj.get("corpus"),
        )


@dataclass
class LongFormSample:
    talk_id: str
    window_start: float
    duration: float
    record: MultitaskRecord
    source_segment_ids: list[str]
    oversized: bool = False

    @property
    def sample_id(self) -> str:
        task = self.record.task if self.record.task == "asr" else f"st_{self.record.target_language}"
        return f"{self.talk_id}_{round(self.window_start * 1000):09d}_{task}"

    def to_json(self, vocab: Vocabulary | None = None) -> dict:
        out = {
            "id": self.sample_id,
            "talk_id": self.talk_id,
            "window_start": self.window_start,
            "duration": self.duration,
            "record": self.record.to_json(),
            "source_segment_ids": self.source_segment_ids,
            "oversized": self.oversized,
        }
        if vocab is not None:
            out["token_ids"] = encode_record(self.record, vocab)
        return out


def _group_talk(segs: list[tuple[str, UtteranceSegment]], max_duration: float):
    group: list[tuple[str, UtteranceSegment]] = []
    for sid, seg in segs:
        if group and seg.end - group[0][1].start <= max_duration:
            group.append((sid, seg))
        else:
            if group:
                yield group
            group = [(sid, seg)]
    if group:
        yield group


def concatenate_segments(
    segments: Sequence[UtteranceSegment],
    max_duration: float = MAX_SECONDS,
    *,
    with_translations: bool = False,
    prompt_previous: bool = False,
) -> list[LongFormSample]:
    """Pack consecutive utterances of each talk into windows <= ``max_duration``.

    A segment joins the open window iff it belongs to the same talk and its
    end lies within ``max_duration`` of the window start; silence between
    utterances counts.  A lone segment longer than the limit becomes its own
    sample flagged ``oversized`` (its end timestamp is clipped to 30 s).

    With ``with_translations`` each window additionally yields one untimed ST
    sample per target language that every member segment is translated into.
    With ``prompt_previous`` the transcript of the preceding window of the same
    talk is put in the prompt slot.
    """
    keyed = [(s.id if s.id is not None else str(i), s) for i, s in enumerate(segments)]
    for (_, a), (_, b) in zip(keyed, keyed[1:]):
        if (a.talk_id, a.start) > (b.talk_id, b.start):
            raise ValueError(f"segments not sorted by (talk_id, start) at talk {b.talk_id!r}, t={b.start}")
        if a.talk_id == b.talk_id and b.start < a.end:
            raise ValueError(f"overlapping segments in talk {a.talk_id!r} at t={b.start}")

    samples: list[LongFormSample] = []
    for talk_id, talk_segs in itertools.groupby(keyed, key=lambda kv: kv[1].talk_id):
        previous_text = None
        for group in _group_talk(list(talk_segs), max_duration):
            w0 = group[0][1].start
            duration = group[-1][1].end - w0
            oversized = duration > max_duration
            timed = tuple(
                Segment(snap(s.start - w0), s.text, snap(min(s.end - w0, MAX_SECONDS))) for _, s in group
            )
            ids = [sid for sid, _ in group]
            language = group[0][1].language
            prompt = previous_text if prompt_previous else None
            samples.append(
                LongFormSample(
                    talk_id=talk_id,
                    window_start=w0,
                    duration=duration,
                    record=MultitaskRecord(language=language, segments=timed, prompt=prompt),
                    source_segment_ids=ids,
                    oversized=oversized,
                )
            )
            if with_translations:
                common = set.intersection(*(set((s.translations or {}).keys()) for _, s in group))
                for tgt in sorted(common):
                    text = " ".join(s.translations[tgt] for _, s in group).strip()
                    rec = MultitaskRecord.untimed(language, text, task="st", target_language=tgt)
                    samples.append(LongFormSample(talk_id, w0, duration, rec, ids, oversized))
            previous_text = " ".join(s.text for _, s in group).strip() or None
    return samples


@dataclass
class Dropped:
    sample: LongFormSample
    reason: str


def filter_by_length(
    samples: Iterable[LongFormSample], vocab: Vocabulary, max_tokens: int = 600
) -> tuple[list[LongFormSample], list[Dropped]]:
    """Drop samples whose encoding (prompt plus target) exceeds ``max_tokens``."""
    kept, dropped = [], []
    for s in samples:
        try:
            n = len(encode_record(s.record, vocab))
        except TokenFormatError as e:
            dropped.append(Dropped(s, f"unencodable: {e}"))
            continue
        if n > max_tokens:
            dropped.append(Dropped(s, f"too long: {n} > {max_tokens} tokens"))
        else:
            kept.append(s)
    return kept, dropped


@dataclass
class ShardAssignment:
    n_shards: int
    shard_of: dict[Hashable, int] = field(default_factory=dict)

    def shards(self) -> list[list[Hashable]]:
        out: list[list[Hashable]] = [[] for _ in range(self.n_shards)]
        for sid, k in self.shard_of.items():
            out[k].append(sid)
        return out

    def sizes(self) -> list[int]:
        return [len(s) for s in self.shards()]


def _stable_hash(key: str) -> int:
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


def partition_shards(
    sample_ids: Sequence[Hashable], n_shards: int, policy: str = "round_robin", seed: int = 0
) -> ShardAssignment:
    """Split ids into ``n_shards`` disjoint subsets.

    ``round_robin`` deals a seeded shuffle of the ids, so sizes differ by at
    most one; ``hash`` places each id by a seeded SHA-256 of its string form.
    """
    if n_shards < 1:
        raise ValueError("n_shards must be >= 1")
    if n_shards > len(sample_ids):
        raise ValueError(f"{n_shards} shards requested for {len(sample_ids)} samples")
    if len(set(sample_ids)) != len(sample_ids):
        raise ValueError("duplicate sample ids")
    lo, hi = SHARD_RANGE
    if not lo <= n_shards <= hi:
        logger.warning("n_shards=%d is outside the usual range %d-%d", n_shards, lo, hi)
    if policy == "round_robin":
        order = list(sample_ids)
        random.Random(seed).shuffle(order)
        shard_of = {sid: i % n_shards for i, sid in enumerate(order)}
        # report in input order
        shard_of = {sid: shard_of[sid] for sid in sample_ids}
    elif policy == "hash":
        shard_of = {sid: _stable_hash(f"{seed}:{sid}") % n_shards for sid in sample_ids}
    else:
        raise ValueError(f"unknown shard policy {policy!r}")
    return ShardAssignment(n_shards, shard_of)


def sample_transcripts(corpus: Iterable[str], n: int = 10_000_000, seed: int = 0) -> list[str]:
    """Uniform reservoir sample of ``min(n, len(corpus))`` lines in one pass.

    Uses Li's skip-ahead variant (Algorithm L): O(n) memory and only
    O(n log(N/n)) random draws; skipped lines are consumed by ``islice``.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    it = iter(corpus)
    reservoir = list(itertools.islice(it, n))
    if len(reservoir) < n or n == 0:
        return reservoir
    rng = random.Random(seed)

    def u() -> float:
        return 1.0 - rng.random()  # (0, 1]

    w = math.exp(math.log(u()) / n)
    end = object()
    while True:
        if w >= 1.0:
            skip = 0
        else:
            skip = math.floor(math.log(u()) / math.log1p(-w))
        item = next(itertools.islice(it, skip, None), end)
        if item is end:
            return reservoir
        reservoir[rng.randrange(n)] = item
        w *= math.exp(math.log(u()) / n)


def subsample_validation(samples: Sequence, fraction: float = 0.10, seed: int = 0) -> list:
    """Deterministic uniform subset of ``ceil(fraction * N)`` items, original order kept."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    # 1e-9 guards against 0.1 * 100 landing a hair above 10
    k = min(len(samples), math.ceil(fraction * len(samples) - 1e-9))
    idx = sorted(random.Random(seed).sample(range(len(samples)), k))
    return [samples[i] for i in idx]


def pad_or_trim_audio(audio: np.ndarray, target: float = MAX_SECONDS, rate: int = 16000) -> np.ndarray:
    if rate <= 0:
        raise ValueError("rate must be positive")
    n = int(round(target * rate))
    audio = np.asarray(audio)
    if len(audio) >= n:
        return audio[:n]
    out = np.zeros(n, dtype=audio.dtype)
    out[: len(audio)] = audio
    return out

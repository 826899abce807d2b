"""Multitask token vocabulary and record (de)serialization.

A target sequence looks like::

    [<sop> prompt-pieces] <sos> <lang> <task> ([<t0>] text [<t1>])* <eos>

Timestamps are quantized to 20 ms and live in 1501 special tokens
``<0.00>`` .. ``<30.00>``.  Ids are assigned specials first, then BPE pieces,
and the CTC blank takes the last id.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

from .bpe import BpeModel, EncodingError

TIMESTAMP_STEP = 0.02
STEPS_PER_SECOND = 50
MAX_TIMESTAMP_INDEX = 1500
MAX_SECONDS = 30.0
_CODE_RE = re.compile(r"^[a-z]{2,3}$")
_TS_RE = re.compile(r"^<(\d{1,2})\.(\d{2})>$")


class TokenFormatError(ValueError):
    pass


class RecordError(TokenFormatError):
    pass


class TokenParseError(TokenFormatError):
    """Token sequence violates the target grammar at ``position``."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class SpecialToken:
    kind: str  # sop | sos | eos | lang | asr | st | timestamp
    value: str | int | None = None

    def render(self) -> str:
        if self.kind in ("sop", "sos", "eos", "asr"):
            return f"<{self.kind}>"
        if self.kind == "lang":
            return f"<{self.value}>"
        if self.kind == "st":
            return f"<st_{self.value}>"
        if self.kind == "timestamp":
            return "<%.2f>" % timestamp_seconds(self.value)
        raise TokenFormatError(f"unknown special token kind {self.kind!r}")


SOP = SpecialToken("sop")
SOS = SpecialToken("sos")
EOS = SpecialToken("eos")
ASR = SpecialToken("asr")
BLANK = "<blank>"


def Language(code: str) -> SpecialToken:
    return SpecialToken("lang", code)


def TaskSt(code: str) -> SpecialToken:
    return SpecialToken("st", code)


def Timestamp(index: int) -> SpecialToken:
    return SpecialToken("timestamp", index)


def timestamp_seconds(index: int) -> float:
    # index / 50 is correctly rounded, so 176 -> 3.52 exactly as the literal
    return index / STEPS_PER_SECOND


def quantize_index(seconds: float) -> int:
    if not math.isfinite(seconds) or seconds < 0 or seconds > MAX_SECONDS + TIMESTAMP_STEP / 2:
        raise TokenFormatError(f"timestamp {seconds!r} outside [0, 30.01]")
    index = math.floor(seconds * STEPS_PER_SECOND + 0.5)
    return min(index, MAX_TIMESTAMP_INDEX)


def quantize_timestamp(seconds: float) -> SpecialToken:
    return Timestamp(quantize_index(seconds))


def snap(seconds: float) -> float:
    """Round seconds onto the timestamp grid."""
    return timestamp_seconds(quantize_index(seconds))


def check_code(code: str) -> str:
    if not isinstance(code, str) or not _CODE_RE.match(code):
        raise TokenFormatError(f"malformed language code {code!r}")
    return code


class Segment(NamedTuple):
    start: float | None
    text: str
    end: float | None


@dataclass(frozen=True)
class MultitaskRecord:
    language: str
    task: str = "asr"  # "asr" or "st"
    target_language: str | None = None
    segments: tuple[Segment, ...] = ()
    timestamps_enabled: bool = True
    prompt: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(Segment(*s) for s in self.segments))

    @classmethod
    def untimed(cls, language: str, text: str, **kw) -> "MultitaskRecord":
        segs = (Segment(None, text, None),) if text else ()
        return cls(language=language, segments=segs, timestamps_enabled=False, **kw)

    @property
    def text(self) -> str:
        return "".join(s.text for s in self.segments)

    def validate(self) -> None:
        check_code(self.language)
        if self.task == "asr":
            if self.target_language is not None:
                raise RecordError("ASR record must not carry a target language")
        elif self.task == "st":
            if self.target_language is None:
                raise RecordError("ST record needs a target language")
            check_code(self.target_language)
        else:
            raise RecordError(f"unknown task {self.task!r}")
        if self.timestamps_enabled:
            if not self.segments:
                # would serialize identically to an empty untimed target
                raise RecordError("timestamped record needs at least one segment")
            prev = 0.0
            for i, s in enumerate(self.segments):
                if s.start is None or s.end is None:
                    raise RecordError(f"segment {i} lacks timestamps")
                if not (0.0 <= s.start <= s.end <= MAX_SECONDS):
                    raise RecordError(f"segment {i} times ({s.start}, {s.end}) out of range")
                if s.start < prev:
                    raise RecordError(f"segment {i} starts before segment {i - 1}")
                prev = s.start
        else:
            if any(s.start is not None or s.end is not None for s in self.segments):
                raise RecordError("untimed record carries timestamps")
            # without boundaries only one non-empty text block is recoverable
            if len(self.segments) > 1 or (self.segments and not self.segments[0].text):
                raise RecordError("untimed record must hold at most one non-empty segment")

    def to_json(self) -> dict:
        return {
            "language": self.language,
            "task": self.task,
            "target_language": self.target_language,
            "prompt": self.prompt,
            "timestamps_enabled": self.timestamps_enabled,
            "segments": [list(s) for s in self.segments],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MultitaskRecord":
        return cls(
            language=obj["language"],
            task=obj.get("task", "asr"),
            target_language=obj.get("target_language"),
            prompt=obj.get("prompt"),
            timestamps_enabled=obj.get("timestamps_enabled", True),
            segments=tuple(Segment(*s) for s in obj.get("segments", ())),
        )


class Vocabulary:
    """Bijective token <-> id mapping.  Immutable after construction."""

    def __init__(self, pieces: Sequence[str], languages: Sequence[str], st_targets: Sequence[str]):
        if not pieces:
            raise TokenFormatError("piece list is empty")
        for codes, what in ((languages, "language"), (st_targets, "ST target")):
            seen: set[str] = set()
            for c in codes:
                check_code(c)
                if c in seen:
                    raise TokenFormatError(f"duplicate {what} code {c!r}")
                seen.add(c)
        self.bpe = BpeModel(pieces)  # rejects duplicate pieces
        self.pieces = tuple(pieces)
        self.languages = tuple(languages)
        self.st_targets = tuple(st_targets)

        specials = [SOP, SOS, EOS]
        specials += [Language(c) for c in languages]
        specials.append(ASR)
        specials += [TaskSt(c) for c in st_targets]
        specials += [Timestamp(i) for i in range(MAX_TIMESTAMP_INDEX + 1)]
        self.specials = tuple(specials)
        self._special_id = {tok: i for i, tok in enumerate(specials)}
        self.piece_offset = len(specials)
        self._piece_id = {p: self.piece_offset + i for i, p in enumerate(pieces)}
        self.blank_id = self.piece_offset + len(pieces)
        self._ts0 = self._special_id[Timestamp(0)]

        self.sop = self._special_id[SOP]
        self.sos = self._special_id[SOS]
        self.eos = self._special_id[EOS]
        self.asr = self._special_id[ASR]

    def __len__(self) -> int:
        return self.blank_id + 1

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens() == other.tokens()

    def __hash__(self):
        return hash(tuple(self.tokens()))

    # id lookups
    def id_of(self, token: SpecialToken | str) -> int:
        if isinstance(token, SpecialToken):
            try:
                return self._special_id[token]
            except KeyError:
                raise TokenFormatError(f"{token.render()} not in vocabulary") from None
        if token == BLANK:
            return self.blank_id
        try:
            return self._piece_id[token]
        except KeyError:
            raise TokenFormatError(f"piece {token!r} not in vocabulary") from None

    def lang_id(self, code: str) -> int:
        return self.id_of(Language(code))

    def st_id(self, code: str) -> int:
        return self.id_of(TaskSt(code))

    def timestamp_id(self, index: int) -> int:
        if not 0 <= index <= MAX_TIMESTAMP_INDEX:
            raise TokenFormatError(f"timestamp index {index} out of range")
        return self._ts0 + index

    def token(self, id_: int) -> SpecialToken | str:
        if 0 <= id_ < self.piece_offset:
            return self.specials[id_]
        if self.piece_offset <= id_ < self.blank_id:
            return self.pieces[id_ - self.piece_offset]
        if id_ == self.blank_id:
            return BLANK
        raise TokenFormatError(f"id {id_} outside vocabulary of size {len(self)}")

    def render(self, id_: int) -> str:
        tok = self.token(id_)
        return tok.render() if isinstance(tok, SpecialToken) else tok

    def tokens(self) -> list[str]:
        return [self.render(i) for i in range(len(self))]

    def is_piece(self, id_: int) -> bool:
        return self.piece_offset <= id_ < self.blank_id

    def is_timestamp(self, id_: int) -> bool:
        return self._ts0 <= id_ <= self._ts0 + MAX_TIMESTAMP_INDEX

    def timestamp_index(self, id_: int) -> int:
        if not self.is_timestamp(id_):
            raise TokenFormatError(f"id {id_} is not a timestamp")
        return id_ - self._ts0

    @property
    def timestamp_ids(self) -> range:
        return range(self._ts0, self._ts0 + MAX_TIMESTAMP_INDEX + 1)

    def kind(self, id_: int) -> str:
        if self.is_piece(id_):
            return "piece"
        if id_ == self.blank_id:
            return "blank"
        return self.token(id_).kind

    # text
    def encode_text(self, text: str) -> list[int]:
        return [self._piece_id[p] for p in self.bpe.encode(text)]

    def decode_text(self, ids: Sequence[int]) -> str:
        return BpeModel.decode(self.pieces[i - self.piece_offset] for i in ids)

    # files
    def save(self, path: str | Path) -> None:
        from .io import atomic_write_text

        atomic_write_text(path, "".join(t + "\n" for t in self.tokens()))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls.from_tokens(lines)

    @classmethod
    def from_tokens(cls, lines: Sequence[str]) -> "Vocabulary":
        if len(lines) < 3 + 1 + MAX_TIMESTAMP_INDEX + 1 + 2 or lines[:3] != ["<sop>", "<sos>", "<eos>"]:
            raise TokenFormatError("vocabulary file does not start with <sop> <sos> <eos>")
        if lines[-1] != BLANK:
            raise TokenFormatError("vocabulary file must end with <blank>")
        i = 3
        languages, st_targets = [], []
        while i < len(lines) and lines[i] != "<asr>":
            m = re.match(r"^<([a-z]{2,3})>$", lines[i])
            if not m:
                raise TokenFormatError(f"line {i + 1}: expected a language token, got {lines[i]!r}")
            languages.append(m.group(1))
            i += 1
        i += 1
        while i < len(lines) and lines[i] != "<0.00>":
            m = re.match(r"^<st_([a-z]{2,3})>$", lines[i])
            if not m:
                raise TokenFormatError(f"line {i + 1}: expected an ST token, got {lines[i]!r}")
            st_targets.append(m.group(1))
            i += 1
        for k in range(MAX_TIMESTAMP_INDEX + 1):
            if i + k >= len(lines) or lines[i + k] != Timestamp(k).render():
                raise TokenFormatError(f"line {i + k + 1}: expected {Timestamp(k).render()}")
        pieces = lines[i + MAX_TIMESTAMP_INDEX + 1 : -1]
        return cls(pieces, languages, st_targets)


def build_vocabulary(pieces: Sequence[str], languages: Sequence[str], st_targets: Sequence[str]) -> Vocabulary:
    return Vocabulary(pieces, languages, st_targets)


def _text_ids(text: str, vocab: Vocabulary) -> list[int]:
    try:
        return vocab.encode_text(text)
    except EncodingError as e:
        raise TokenFormatError(f"cannot encode {text!r}: {e}") from e


def encode_record(record: MultitaskRecord, vocab: Vocabulary) -> list[int]:
    record.validate()
    ids: list[int] = []
    if record.prompt is not None:
        ids.append(vocab.sop)
        ids += _text_ids(record.prompt, vocab)
    ids += [vocab.sos, vocab.lang_id(record.language)]
    ids.append(vocab.asr if record.task == "asr" else vocab.st_id(record.target_language))
    for seg in record.segments:
        if record.timestamps_enabled:
            ids.append(vocab.timestamp_id(quantize_index(seg.start)))
        ids += _text_ids(seg.text, vocab)
        if record.timestamps_enabled:
            ids.append(vocab.timestamp_id(quantize_index(seg.end)))
    ids.append(vocab.eos)
    return ids


@dataclass
class ParseResult:
    record: MultitaskRecord
    # (start seconds, text) of a segment opened by a timestamp but never closed
    open_segment: tuple[float, str] | None = None
    tokens_consumed: int = 0


def parse_tokens(ids: Sequence[int], vocab: Vocabulary, allow_open: bool = False) -> ParseResult:
    """Parse a target sequence.

    With ``allow_open`` a missing ``<eos>`` is tolerated and a trailing
    segment with a start timestamp but no end is returned separately instead
    of raising.
    """
    n = len(ids)
    pos = 0

    def kind_at(p: int) -> str | None:
        if p >= n:
            return None
        x = ids[p]
        if not isinstance(x, int) or not 0 <= x < len(vocab):
            raise TokenParseError(f"id {x!r} outside vocabulary", p)
        return vocab.kind(x)

    def read_text(p: int) -> tuple[str, int]:
        q = p
        while kind_at(q) == "piece":
            q += 1
        return vocab.decode_text(ids[p:q]), q

    prompt = None
    if kind_at(0) == "sop":
        prompt, pos = read_text(1)
    if kind_at(pos) != "sos":
        raise TokenParseError("expected <sos>" if pos < n else "truncated before <sos>", pos)
    pos += 1
    if kind_at(pos) != "lang":
        raise TokenParseError("expected a language token after <sos>", pos)
    language = vocab.token(ids[pos]).value
    pos += 1
    k = kind_at(pos)
    if k == "asr":
        task, target = "asr", None
    elif k == "st":
        task, target = "st", vocab.token(ids[pos]).value
    else:
        raise TokenParseError("expected a task token", pos)
    pos += 1

    segments: list[Segment] = []
    open_segment = None
    timed = kind_at(pos) == "timestamp"
    if timed:
        prev_start = 0.0
        while kind_at(pos) == "timestamp":
            start = timestamp_seconds(vocab.timestamp_index(ids[pos]))
            if start < prev_start:
                raise TokenParseError("segment start goes backwards", pos)
            text, q = read_text(pos + 1)
            if kind_at(q) != "timestamp":
                if allow_open and kind_at(q) in (None, "eos"):
                    open_segment = (start, text)
                    pos = q
                    break
                raise TokenParseError("segment not closed by a timestamp", q)
            end = timestamp_seconds(vocab.timestamp_index(ids[q]))
            if end < start:
                raise TokenParseError("segment ends before it starts", q)
            segments.append(Segment(start, text, end))
            prev_start = start
            pos = q + 1
    else:
        text, pos = read_text(pos)
        if text:
            segments.append(Segment(None, text, None))

    k = kind_at(pos)
    if k == "eos":
        pos += 1
        if pos != n:
            raise TokenParseError("tokens after <eos>", pos)
    elif k is None:
        if not allow_open:
            raise TokenParseError("truncated: missing <eos>", pos)
    else:
        raise TokenParseError(f"unexpected {vocab.render(ids[pos])}", pos)

    record = MultitaskRecord(
        language=language,
        task=task,
        target_language=target,
        segments=tuple(segments),
        timestamps_enabled=timed and bool(segments),
        prompt=prompt,
    )
    return ParseResult(record=record, open_segment=open_segment, tokens_consumed=pos)


def decode_tokens(ids: Sequence[int], vocab: Vocabulary) -> MultitaskRecord:
    return parse_tokens(ids, vocab).record


def render_tokens(ids: Sequence[int], vocab: Vocabulary) -> str:
    return "".join(
        vocab.decode_text([i]) if vocab.is_piece(i) else vocab.render(i) for i in ids
    )

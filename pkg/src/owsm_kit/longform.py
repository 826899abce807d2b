"""Long-form transcription by timestamp-driven 30 s window shifting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .data_prep import pad_or_trim_audio
from .decoding import DecodeOptions, LogProbLattice, StepScorer, TableScorer, decode, scripted_scorer
from .tokens import (
    MAX_TIMESTAMP_INDEX,
    STEPS_PER_SECOND,
    TokenFormatError,
    Vocabulary,
    parse_tokens,
    quantize_index,
    timestamp_seconds,
)

logger = logging.getLogger(__name__)

CHUNK_SECONDS = 30.0


class AcousticModel(Protocol):
    """Stand-in for the trained network: one 30 s padded chunk in, CTC lattice and decoder scorer out."""

    def __call__(self, chunk: np.ndarray) -> tuple[LogProbLattice, StepScorer]: ...


@dataclass(frozen=True)
class TimedSegment:
    start: float
    end: float
    text: str


@dataclass
class ChunkTrace:
    index: int
    cursor: float
    shift: float
    n_tokens: int
    n_segments: int
    prompt: str | None = None
    warning: str | None = None


@dataclass
class LongFormResult:
    segments: list[TimedSegment] = field(default_factory=list)
    chunk_trace: list[ChunkTrace] = field(default_factory=list)

    @property
    def text(self) -> str:
        return " ".join(s.text.strip() for s in self.segments if s.text.strip())

    @property
    def cursors(self) -> list[float]:
        return [c.cursor for c in self.chunk_trace]


class LongFormError(RuntimeError):
    """Model failure on a chunk; carries the result up to that chunk."""

    def __init__(self, chunk_index: int, partial: LongFormResult, cause: BaseException):
        super().__init__(f"model failed on chunk {chunk_index}: {cause}")
        self.chunk_index = chunk_index
        self.partial = partial


def build_prompt(previous_text: str, vocab: Vocabulary, max_prompt_tokens: int) -> str | None:
    """Longest suffix of ``previous_text`` cut at a piece boundary that encodes to <= the cap."""
    if max_prompt_tokens < 0:
        raise ValueError("max_prompt_tokens must be >= 0")
    if not previous_text or max_prompt_tokens == 0:
        return None
    pieces = vocab.bpe.encode(previous_text)
    k = min(max_prompt_tokens, len(pieces))
    while k > 0:
        text = vocab.bpe.decode(pieces[-k:])
        if len(vocab.bpe.encode(text)) <= max_prompt_tokens:
            return text
        k -= 1
    return None


def transcribe_longform(
    audio: np.ndarray,
    model: AcousticModel,
    opts: DecodeOptions,
    vocab: Vocabulary,
    *,
    language: str | None = "en",
    condition_on_previous: bool = True,
    max_prompt_tokens: int = 200,
    rate: int = 16000,
) -> LongFormResult:
    """Decode ``audio`` in 30 s windows, advancing by the last predicted end timestamp.

    Each window is padded to 30 s and decoded with the forced context
    ``[<sop> prompt] <sos> [<lang> <asr>]`` (language and task are left to the
    model when ``language`` is None).  Completed segments are emitted with
    absolute times; a trailing segment without an end timestamp is dropped
    and re-decoded from the next window.  The window moves by the last
    emitted end time, or by 30 s when nothing was timestamped or the tokens
    do not parse.  Cursor arithmetic runs on the 20 ms timestamp grid.
    """
    audio = np.asarray(audio)
    if audio.size == 0:
        raise ValueError("empty audio")
    samples_per_step = rate / STEPS_PER_SECOND
    if samples_per_step != int(samples_per_step):
        raise ValueError(f"sample rate {rate} is not a multiple of {STEPS_PER_SECOND} Hz")
    samples_per_step = int(samples_per_step)
    chunk_samples = int(CHUNK_SECONDS * rate)
    total_steps = -(-len(audio) // samples_per_step)  # ceil, grid units
    transparent = list(vocab.timestamp_ids)

    result = LongFormResult()
    cursor = 0  # grid units
    index = 0
    while cursor < total_steps:
        begin = cursor * samples_per_step
        chunk = pad_or_trim_audio(audio[begin : begin + chunk_samples], CHUNK_SECONDS, rate)
        prompt = None
        if condition_on_previous and result.segments:
            prompt = build_prompt(result.text, vocab, max_prompt_tokens)
        context: list[int] = []
        if prompt is not None:
            context += [vocab.sop] + vocab.encode_text(prompt)
        prefix_len = len(context)
        context.append(vocab.sos)
        if language is not None:
            context += [vocab.lang_id(language), vocab.asr]
        try:
            lattice, scorer = model(chunk)
            tokens = decode(opts, lattice=lattice, scorer=scorer, context=context, eos_id=vocab.eos, ctc_transparent=transparent)
        except Exception as e:
            raise LongFormError(index, result, e) from e

        shift = MAX_TIMESTAMP_INDEX
        warning = None
        emitted = 0
        try:
            parsed = parse_tokens(context[prefix_len:] + list(tokens) + [vocab.eos], vocab, allow_open=True)
        except TokenFormatError as e:
            warning = f"unparseable chunk output: {e}"
            logger.warning("chunk %d: %s", index, warning)
        else:
            rec = parsed.record
            if rec.timestamps_enabled:
                for seg in rec.segments:
                    result.segments.append(TimedSegment(
                        timestamp_seconds(cursor + round(seg.start * STEPS_PER_SECOND)),
                        timestamp_seconds(cursor + round(seg.end * STEPS_PER_SECOND)),
                        seg.text,
                    ))
                    emitted += 1
                last_end = round(rec.segments[-1].end * STEPS_PER_SECOND)
                if last_end > 0:
                    shift = last_end
        result.chunk_trace.append(
            ChunkTrace(index, timestamp_seconds(cursor), timestamp_seconds(shift), len(tokens), emitted, prompt, warning)
        )
        cursor += shift
        index += 1
    return result


class ScriptedModel:
    """Mock model keyed by the chunk's time code.

    Audio built with :func:`timecode_audio` carries its own time in every
    sample, so the first sample of a chunk identifies the window start.  Each
    script entry maps a start time (seconds) to a ``(lattice, scorer)`` pair;
    windows without an entry get ``default``.
    """

    def __init__(self, script: dict[float, tuple[LogProbLattice, StepScorer]], default, rate: int = 16000, scale: float = 1e-3):
        self.script = {round(k * STEPS_PER_SECOND): v for k, v in script.items()}
        self.default = default
        self.rate = rate
        self.scale = scale
        self.calls: list[float] = []

    def __call__(self, chunk: np.ndarray):
        seconds = float(chunk[0]) / self.scale
        key = round(seconds * STEPS_PER_SECOND)
        self.calls.append(timestamp_seconds(key))
        return self.script.get(key, self.default)


def timecode_audio(duration: float, rate: int = 16000, scale: float = 1e-3) -> np.ndarray:
    """Ramp whose sample value is ``scale * time``; stays within [-1, 1] up to 1000 s."""
    return (np.arange(int(round(duration * rate))) / rate * scale).astype(np.float64)


def segments_to_tokens(segments: Sequence[tuple[float, str, float]], vocab: Vocabulary) -> list[int]:
    """Timestamped body tokens for a mock script (no context, no EOS)."""
    out: list[int] = []
    for start, text, end in segments:
        out.append(vocab.timestamp_id(quantize_index(start)))
        out += vocab.encode_text(text)
        out.append(vocab.timestamp_id(quantize_index(end)))
    return out


def scripted_lattice(labels: Sequence[int], num_frames: int, vocab_size: int, blank_id: int, peak: float = 0.9999) -> LogProbLattice:
    """One-hot-ish lattice spelling ``labels`` with a blank between consecutive labels.

    The peak is high on purpose: with a flatter lattice the leftover mass on
    hundreds of frames makes longer label sequences likelier than ``labels``.
    """
    align = [blank_id] * num_frames
    pos = 0
    for lab in labels:
        if pos >= num_frames:
            raise ValueError(f"{len(labels)} labels do not fit in {num_frames} frames")
        align[pos] = lab
        pos += 2
    return LogProbLattice.one_hot(align, vocab_size, blank_id, peak, frame_shift=CHUNK_SECONDS / num_frames)


@dataclass
class Scenario:
    """Declarative mock transcription: audio length, vocabulary and per-window model outputs."""

    duration: float
    vocab: Vocabulary
    model: ScriptedModel
    language: str | None = "en"
    rate: int = 16000
    expected_cursors: list[float] | None = None
    expected_text: str | None = None

    def audio(self) -> np.ndarray:
        return timecode_audio(self.duration, self.rate, self.model.scale)


def _chunk_outputs(entry: dict, vocab: Vocabulary, language: str | None, num_frames: int, base_dir):
    def resolve(obj, loader, from_json):
        if isinstance(obj, str):
            return loader(Path(base_dir, obj))
        return from_json(obj)

    if "segments" in entry:
        body = segments_to_tokens([tuple(s) for s in entry["segments"]], vocab)
        forced = [vocab.lang_id(language), vocab.asr] if language is not None else []
        scorer = scripted_scorer(forced + body, len(vocab), vocab.eos, strip_through=vocab.sos)
        labels = [t for t in body if vocab.is_piece(t)]
        lattice = scripted_lattice(labels, num_frames, len(vocab), vocab.blank_id)
    else:
        lattice = resolve(entry["lattice"], LogProbLattice.load, LogProbLattice.from_json)
        scorer = resolve(entry["scorer"], TableScorer.load, TableScorer.from_json)
    return lattice, scorer


def load_scenario(obj: dict, base_dir=".") -> Scenario:
    """Build a :class:`Scenario` from its JSON form.

    Chunk entries give either ``segments`` (``[start, text, end]`` triples,
    turned into a scripted scorer and a matching lattice) or explicit
    ``lattice`` and ``scorer`` objects / file paths.  ``cursor`` keys each
    entry to its window start.
    """
    v = obj["vocab"]
    if isinstance(v, str):
        vocab = Vocabulary.load(Path(base_dir, v))
    else:
        vocab = Vocabulary(v["pieces"], v.get("languages", ["en"]), v.get("st_targets", []))
    language = obj.get("language", "en")
    rate = int(obj.get("sample_rate", 16000))
    num_frames = int(obj.get("frames_per_chunk", 750))
    script = {}
    for entry in obj.get("chunks", []):
        script[float(entry["cursor"])] = _chunk_outputs(entry, vocab, language, num_frames, base_dir)
    default = _chunk_outputs(obj.get("default", {"segments": []}), vocab, language, num_frames, base_dir)
    cursors = [float(e["cursor"]) for e in obj.get("chunks", [])]
    return Scenario(
        duration=float(obj["duration"]),
        vocab=vocab,
        model=ScriptedModel(script, default, rate),
        language=language,
        rate=rate,
        expected_cursors=obj.get("expected_cursors", cursors or None),
        expected_text=obj.get("expected_text"),
    )

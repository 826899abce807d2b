"""``owsm-kit`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import wave
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from itertools import groupby
from pathlib import Path

import numpy as np

from . import plotting
from .bpe import BpeModel, train_bpe
from .config import ConfigError, PipelineConfig, default_seed, resolve_config
from .data_prep import (
    UtteranceSegment,
    concatenate_segments,
    filter_by_length,
    partition_shards,
    sample_transcripts,
)
from .decoding import DecodeOptions, LogProbLattice, TableScorer, combined_score, decode
from .features import (
    FeatureMatrix,
    accumulate_cmvn,
    apply_cmvn,
    CmvnStats,
    log_mel,
    reduce_time_resolution,
    spec_augment,
)
from .io import atomic_open, atomic_write_text, dumps_line, read_jsonl, write_jsonl
from .longform import LongFormError, load_scenario, transcribe_longform
from .normalizers import load_english_table, normalize_text
from .scoring import EditAlignment, bleu_stats, char_error_rate, lid_accuracy, word_error_rate
from .tokens import MultitaskRecord, TokenFormatError, Vocabulary, encode_record, parse_tokens, render_tokens

logger = logging.getLogger("owsm_kit")

D = PipelineConfig()
ALGO_NAMES = {"ctc": "ctc_greedy", "attention": "attention_greedy", "joint": "joint"}


def _codes(arg: str | None) -> list[str]:
    if not arg:
        return []
    if arg.startswith("@"):
        return Path(arg[1:]).read_text(encoding="utf-8").split()
    return [c for c in arg.replace(",", " ").split() if c]


def _config(args) -> PipelineConfig:
    return resolve_config(vars(args), getattr(args, "config", None))


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: only mono 16-bit PCM WAV is supported")
        rate = w.getframerate()
        data = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return data.astype(np.float64) / 32768.0, rate


# vocab-build / bpe-train ------------------------------------------------------


def cmd_vocab_build(args) -> int:
    pieces = BpeModel.load(args.pieces).pieces
    vocab = Vocabulary(pieces, _codes(args.languages), _codes(args.st_targets))
    vocab.save(args.out)
    logger.info("wrote %d tokens to %s", len(vocab), args.out)
    return 0


def cmd_bpe_train(args) -> int:
    seed = default_seed() if args.seed is None else args.seed
    with open(args.texts, encoding="utf-8") as fh:
        lines = (line.rstrip("\n") for line in fh)
        texts = sample_transcripts((t for t in lines if t), args.sample_n, seed)
    pieces = train_bpe(texts, args.vocab_size)
    BpeModel(pieces).save(args.out)
    logger.info("trained %d pieces on %d transcripts", len(pieces), len(texts))
    return 0


# prepare ----------------------------------------------------------------------


def _concat_talk(payload):
    segs, max_duration, with_translations, prompt_previous = payload
    return concatenate_segments(segs, max_duration, with_translations=with_translations, prompt_previous=prompt_previous)


def cmd_prepare(args) -> int:
    cfg = _config(args)
    if cfg.manifest is None or cfg.vocab is None or cfg.shard_dir is None:
        raise ConfigError("prepare needs --manifest, --vocab and --out-dir (or the same keys in --config)")
    vocab = Vocabulary.load(cfg.vocab)
    segments = [UtteranceSegment.from_json(o) for o in read_jsonl(cfg.manifest)]
    segments = [s if s.id is not None else replace(s, id=f"{i:08d}") for i, s in enumerate(segments)]
    segments.sort(key=lambda s: (s.talk_id, s.start))
    corpus_of = {s.talk_id: s.corpus or "default" for s in segments}
    talks = [list(g) for _, g in groupby(segments, key=lambda s: s.talk_id)]
    payloads = [(t, cfg.max_duration, args.with_translations, args.prompt_previous) for t in talks]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            groups = list(pool.map(_concat_talk, payloads))
    else:
        groups = [_concat_talk(p) for p in payloads]
    samples = [s for g in groups for s in g]

    oversized = [s for s in samples if s.oversized]
    candidates = samples if args.keep_oversized else [s for s in samples if not s.oversized]
    kept, dropped = filter_by_length(candidates, vocab, cfg.max_tokens)
    assignment = partition_shards([s.sample_id for s in kept], cfg.n_shards, cfg.shard_policy, cfg.seed)
    by_id = {s.sample_id: s for s in kept}

    out_dir = Path(cfg.shard_dir)
    for k in range(cfg.n_shards):
        rows = [by_id[sid].to_json(vocab) for sid in by_id if assignment.shard_of[sid] == k]
        write_jsonl(out_dir / f"shard-{k:03}.jsonl", rows)

    per_corpus: dict[str, Counter] = defaultdict(Counter)
    for s in segments:
        per_corpus[corpus_of[s.talk_id]]["segments"] += 1
    for s in kept:
        per_corpus[corpus_of[s.talk_id]]["kept"] += 1
    for d in dropped:
        per_corpus[corpus_of[d.sample.talk_id]]["dropped"] += 1
    for s in oversized:
        per_corpus[corpus_of[s.talk_id]]["oversized"] += 1
    asr = [s for s in samples if s.record.task == "asr"]
    report = {
        "segments_total": len(segments),
        "segments_covered": sum(len(s.source_segment_ids) for s in asr),
        "samples_total": len(samples),
        "kept": len(kept),
        "dropped": len(dropped),
        "oversized": len(oversized),
        "dropped_reasons": dict(Counter(d.reason.split(":")[0] for d in dropped)),
        "dropped_samples": [{"id": d.sample.sample_id, "reason": d.reason} for d in dropped],
        "oversized_samples": [s.sample_id for s in oversized],
        "shard_sizes": assignment.sizes(),
        "per_corpus": {c: dict(v) for c, v in sorted(per_corpus.items())},
        "config": {k: v for k, v in cfg.__dict__.items()},
    }
    atomic_write_text(out_dir / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    with atomic_open(out_dir / "samples.tsv") as fh:
        fh.write("id\tshard\tduration\ttokens\n")
        for sid, s in by_id.items():
            fh.write(f"{sid}\t{assignment.shard_of[sid]}\t{s.duration:.2f}\t{len(encode_record(s.record, vocab))}\n")
    if args.figures:
        plotting.plot_prepare_report([s.duration for s in samples], assignment.sizes(), Path(args.figures) / "prepare.png", cfg.max_duration)
    logger.info("prepared %d samples into %d shards (%d dropped, %d oversized)", len(kept), cfg.n_shards, len(dropped), len(oversized))
    return 0


# tokenize / detokenize --------------------------------------------------------


def _out_stream(path):
    return atomic_open(path) if path and path != "-" else _Stdout()


class _Stdout:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        sys.stdout.flush()
        return False


def cmd_tokenize(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    rows = [encode_record(MultitaskRecord.from_json(o.get("record", o)), vocab) for o in read_jsonl(args.input)]
    with _out_stream(args.output) as fh:
        for ids in rows:
            fh.write(json.dumps(ids) + "\n")
    return 0


def cmd_detokenize(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    rows = []
    for ids in read_jsonl(args.input):
        if args.render:
            rows.append({"text": render_tokens(ids, vocab)})
        else:
            rows.append(parse_tokens(ids, vocab).record.to_json())
    with _out_stream(args.output) as fh:
        for r in rows:
            fh.write(dumps_line(r))
    return 0


# features / cmvn --------------------------------------------------------------


def cmd_features(args) -> int:
    cfg = _config(args)
    audio, rate = read_wav(args.wav)
    feats = log_mel(audio, rate)
    if args.cmvn:
        feats = apply_cmvn(feats, CmvnStats.from_json(json.loads(Path(args.cmvn).read_text())))
    if args.spec_augment:
        feats = spec_augment(feats, seed=cfg.seed)
    if args.reduce:
        feats = reduce_time_resolution(feats, cfg.time_reduction)
    feats.save(args.out, binary=args.binary)
    logger.info("%s: %d frames x %d", args.out, feats.num_frames, feats.dim)
    return 0


def cmd_cmvn(args) -> int:
    stats = accumulate_cmvn(FeatureMatrix.load(p) for p in args.features)
    atomic_write_text(args.out, json.dumps(stats.to_json()) + "\n")
    return 0


# decode -----------------------------------------------------------------------


def cmd_decode(args) -> int:
    cfg = _config(args)
    lattice = LogProbLattice.load(args.lattice)
    scorer = TableScorer.load(args.scorer) if args.scorer else None
    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    if vocab is not None and len(vocab) != lattice.vocab_size:
        raise ValueError(f"vocabulary has {len(vocab)} tokens, lattice has {lattice.vocab_size} columns")
    if args.context is not None:
        context = [int(x) for x in args.context.split()]
    elif vocab is not None:
        context = [vocab.sos, vocab.lang_id(args.language), vocab.asr]
    else:
        context = []
    eos = args.eos_id if args.eos_id is not None else (vocab.eos if vocab is not None else None)
    transparent = list(vocab.timestamp_ids) if vocab is not None else []
    algos = list(ALGO_NAMES) if args.algorithm == "all" else [args.algorithm]
    if eos is None and algos != ["ctc"]:
        raise ConfigError("--eos-id (or --vocab) is required for attention and joint decoding")

    results = []
    for name in algos:
        opts = DecodeOptions(ALGO_NAMES[name], cfg.beam_size, cfg.ctc_weight, cfg.max_len, cfg.n_best)
        tokens = decode(opts, lattice=lattice, scorer=scorer, context=context, eos_id=eos, ctc_transparent=transparent)
        entry = {"algorithm": name, "tokens": tokens}
        if scorer is not None and eos is not None:
            entry["score"] = combined_score(tokens, scorer, lattice, cfg.ctc_weight, eos_id=eos, context=context, ctc_transparent=transparent)
        if vocab is not None:
            entry["text"] = render_tokens(tokens, vocab)
            full = context + tokens + [vocab.eos]
            try:
                entry["record"] = parse_tokens(full, vocab).record.to_json()
            except TokenFormatError as e:
                entry["record"] = None
                entry["parse_error"] = str(e)
        results.append(entry)
    out = results[0] if len(results) == 1 else results
    text = json.dumps(out, ensure_ascii=False, indent=None if args.output else 2) + "\n"
    if args.output:
        atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)
    if args.figures and all("score" in r for r in results):
        plotting.plot_decoding_comparison({r["algorithm"]: r["score"] for r in results}, Path(args.figures) / "decoding.png")
    return 0


# transcribe -------------------------------------------------------------------


def cmd_transcribe(args) -> int:
    cfg = _config(args)
    scenario_path = Path(args.scenario)
    scenario = load_scenario(json.loads(scenario_path.read_text(encoding="utf-8")), scenario_path.parent)
    opts = DecodeOptions(ALGO_NAMES[args.algorithm], cfg.beam_size, cfg.ctc_weight, cfg.max_len, 1)
    try:
        result = transcribe_longform(
            scenario.audio(),
            scenario.model,
            opts,
            scenario.vocab,
            language=scenario.language,
            condition_on_previous=not args.no_condition,
            max_prompt_tokens=cfg.max_prompt_tokens,
            rate=scenario.rate,
        )
        status = 0
    except LongFormError as e:
        logger.error("%s", e)
        result, status = e.partial, 1
    rows = [{"start": s.start, "end": s.end, "text": s.text} for s in result.segments]
    trace = [c.__dict__ for c in result.chunk_trace]
    with _out_stream(args.output) as fh:
        for r in rows:
            fh.write(dumps_line(r))
    trace_path = args.trace or (f"{args.output}.trace.json" if args.output and args.output != "-" else None)
    if trace_path:
        atomic_write_text(trace_path, json.dumps({"cursors": result.cursors, "chunks": trace}, indent=2) + "\n")
    else:
        for c in result.chunk_trace:
            print(f"chunk {c.index}: cursor {c.cursor:.2f} shift {c.shift:.2f} tokens {c.n_tokens}", file=sys.stderr)
    if scenario.expected_cursors is not None and result.cursors != scenario.expected_cursors:
        logger.warning("cursor trace %s differs from scenario's expected %s", result.cursors, scenario.expected_cursors)
    if args.figures:
        plotting.plot_longform_timeline(result.segments, result.chunk_trace, scenario.duration, Path(args.figures) / "longform.png")
    return status


# score ------------------------------------------------------------------------


def _read_utterances(path: str | Path) -> list[tuple[str | None, str]]:
    """Plain text (one utterance per line) or JSONL with ``text`` and optional ``id``."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if str(path).endswith(".jsonl"):
        out = []
        for line in lines:
            if line.strip():
                o = json.loads(line)
                out.append((o.get("id"), o.get("text", o.get("language", ""))))
        return out
    return [(None, line) for line in lines]


def cmd_score(args) -> int:
    refs = _read_utterances(args.refs)
    hyps = _read_utterances(args.hyps)
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    if all(r[0] is not None for r in refs) and all(h[0] is not None for h in hyps):
        hyp_map = dict(hyps)
        missing = [rid for rid, _ in refs if rid not in hyp_map]
        if missing:
            raise ValueError(f"hypotheses missing for ids {missing[:5]}")
        hyps = [(rid, hyp_map[rid]) for rid, _ in refs]
    ids = [r[0] if r[0] is not None else str(i) for i, r in enumerate(refs)]
    table = load_english_table(args.english_table) if args.english_table else None

    def norm(t: str) -> str:
        return normalize_text(t, args.normalizer, table)

    report: dict = {"metric": args.metric, "normalizer": args.normalizer, "utterances": len(refs)}
    per_utt = []
    if args.metric in ("wer", "cer"):
        fn = word_error_rate if args.metric == "wer" else char_error_rate
        total = EditAlignment(0, 0, 0, 0)
        for uid, (_, r), (_, h) in zip(ids, refs, hyps):
            rate, a = fn(norm(r), norm(h))
            total = total + a
            per_utt.append({"id": uid, "rate": rate, **a.__dict__, "ref_len": a.ref_len})
        report.update(score=total.rate, **total.__dict__, ref_len=total.ref_len)
    elif args.metric == "bleu":
        stats = bleu_stats([norm(r) for _, r in refs], [norm(h) for _, h in hyps])
        report.update(score=stats.score, precisions=stats.precisions, brevity_penalty=stats.brevity_penalty,
                      hyp_len=stats.hyp_len, ref_len=stats.ref_len)
        for uid, (_, r), (_, h) in zip(ids, refs, hyps):
            s = bleu_stats([norm(r)], [norm(h)])
            per_utt.append({"id": uid, "bleu": s.score})
    else:
        ref_codes = [r.strip() for _, r in refs]
        hyp_codes = [h.strip() for _, h in hyps]
        report["score"] = lid_accuracy(ref_codes, hyp_codes)
        per_utt = [{"id": uid, "ref": a, "hyp": b, "correct": a == b} for uid, a, b in zip(ids, ref_codes, hyp_codes)]
    report["per_utterance"] = per_utt
    text = json.dumps(report, indent=2, ensure_ascii=False) + "\n"
    if args.output:
        atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)
    if args.tsv:
        keys = list(per_utt[0]) if per_utt else ["id"]
        with atomic_open(args.tsv) as fh:
            fh.write("\t".join(keys) + "\n")
            for row in per_utt:
                fh.write("\t".join(str(row[k]) for k in keys) + "\n")
    if args.figures and args.metric in ("wer", "cer"):
        plotting.plot_error_rates(ids, [u["rate"] for u in per_utt], report["score"], args.metric, Path(args.figures) / f"{args.metric}.png")
    return 0


# parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="owsm-kit", description="Whisper-style data preparation, decoding and scoring toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="flat YAML key-value file; command-line flags take precedence")
        sp.add_argument("--seed", type=int, help="random seed (default: $OWSM_KIT_SEED or 0)")

    def decoding_flags(sp):
        sp.add_argument("--beam", dest="beam_size", type=int, help=f"beam size (default {D.beam_size})")
        sp.add_argument("--ctc-weight", type=float, help=f"CTC weight in joint scoring (default {D.ctc_weight})")
        sp.add_argument("--max-len", type=int, help=f"maximum decoded tokens (default {D.max_len})")

    sp = sub.add_parser("vocab-build", help="build a vocabulary file from BPE pieces and language codes")
    sp.add_argument("--pieces", required=True, help="BPE model file, one piece per line")
    sp.add_argument("--languages", required=True, help="comma-separated ISO-639 codes or @file")
    sp.add_argument("--st-targets", default="", help="comma-separated ST target codes or @file")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_vocab_build)

    sp = sub.add_parser("bpe-train", help="reservoir-sample transcripts and train BPE pieces")
    sp.add_argument("--texts", required=True, help="text file, one transcript per line")
    sp.add_argument("--vocab-size", type=int, required=True)
    sp.add_argument("--sample-n", type=int, default=10_000_000, help="transcripts to sample (default 10000000)")
    sp.add_argument("--seed", type=int, help="random seed (default: $OWSM_KIT_SEED or 0)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_bpe_train)

    sp = sub.add_parser("prepare", help="concatenate, encode, length-filter and shard a segment manifest")
    with_config(sp)
    sp.add_argument("--manifest", help="JSONL of utterance segments")
    sp.add_argument("--vocab", help="vocabulary file")
    sp.add_argument("--out-dir", dest="shard_dir", help="directory for shard-NNN.jsonl and report.json")
    sp.add_argument("--n-shards", type=int, help=f"number of shards (default {D.n_shards})")
    sp.add_argument("--policy", dest="shard_policy", choices=["round_robin", "hash"], help=f"shard policy (default {D.shard_policy})")
    sp.add_argument("--max-duration", type=float, help=f"window limit in seconds (default {D.max_duration:g})")
    sp.add_argument("--max-tokens", type=int, help=f"drop samples longer than this (default {D.max_tokens})")
    sp.add_argument("--with-translations", action="store_true", help="also emit ST samples from segment translations")
    sp.add_argument("--prompt-previous", action="store_true", help="put the previous window's text in the prompt slot")
    sp.add_argument("--keep-oversized", action="store_true", help="keep single segments longer than the window limit")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes for concatenation (default 1)")
    sp.add_argument("--figures", help="directory for report figures")
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("tokenize", help="encode JSONL records to JSONL token-id arrays")
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", default="-")
    sp.set_defaults(func=cmd_tokenize)

    sp = sub.add_parser("detokenize", help="parse JSONL token-id arrays back to records")
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", default="-")
    sp.add_argument("--render", action="store_true", help="print rendered token text instead of records")
    sp.set_defaults(func=cmd_detokenize)

    sp = sub.add_parser("features", help="extract 80-dim log-Mel features from a WAV file")
    with_config(sp)
    sp.add_argument("--wav", required=True, help="mono 16-bit PCM WAV")
    sp.add_argument("--out", required=True)
    sp.add_argument("--binary", action="store_true", help="write the OWFM binary format instead of JSON")
    sp.add_argument("--cmvn", help="CMVN stats JSON to apply")
    sp.add_argument("--spec-augment", action="store_true", help="apply SpecAugment masks")
    sp.add_argument("--reduce", action="store_true", help="stack frames by --time-reduction")
    sp.add_argument("--time-reduction", type=int, help=f"frame stacking factor (default {D.time_reduction})")
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("cmvn", help="accumulate global mean/variance over feature files")
    sp.add_argument("--out", required=True)
    sp.add_argument("features", nargs="+")
    sp.set_defaults(func=cmd_cmvn)

    sp = sub.add_parser("decode", help="decode a lattice/scorer pair with CTC, attention or joint search")
    with_config(sp)
    sp.add_argument("--lattice", required=True, help="lattice JSON or binary file")
    sp.add_argument("--scorer", help="table scorer JSON (needed for attention and joint)")
    sp.add_argument("--vocab", help="vocabulary file for rendering and default context")
    sp.add_argument("--algorithm", choices=[*ALGO_NAMES, "all"], default="joint", help="(default joint)")
    sp.add_argument("--language", default="en", help="forced language when --vocab is given (default en)")
    sp.add_argument("--context", help="space-separated forced context ids")
    sp.add_argument("--eos-id", type=int, help="EOS id when no vocabulary is given")
    sp.add_argument("--n-best", type=int, help=f"hypotheses to keep (default {D.n_best})")
    decoding_flags(sp)
    sp.add_argument("--output", help="write JSON here instead of stdout")
    sp.add_argument("--figures", help="directory for a score comparison figure")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("transcribe", help="long-form transcription of a mock scenario")
    with_config(sp)
    sp.add_argument("--scenario", required=True, help="scenario JSON")
    sp.add_argument("--algorithm", choices=list(ALGO_NAMES), default="attention", help="(default attention)")
    decoding_flags(sp)
    sp.add_argument("--no-condition", action="store_true", help="do not prompt each window with previous text")
    sp.add_argument("--max-prompt-tokens", type=int, help=f"prompt length cap (default {D.max_prompt_tokens})")
    sp.add_argument("--output", default="-", help="segments JSONL (default stdout)")
    sp.add_argument("--trace", help="chunk trace JSON (default OUTPUT.trace.json)")
    sp.add_argument("--figures", help="directory for the timeline figure")
    sp.set_defaults(func=cmd_transcribe)

    sp = sub.add_parser("score", help="WER/CER/BLEU/LID scoring of hypotheses against references")
    sp.add_argument("--refs", required=True, help="text file or JSONL with text/id")
    sp.add_argument("--hyps", required=True)
    sp.add_argument("--metric", choices=["wer", "cer", "bleu", "lid"], default="wer", help="(default wer)")
    sp.add_argument("--normalizer", choices=["basic", "english", "none"], default="basic", help="(default basic)")
    sp.add_argument("--english-table", help="replacement table JSON for the english normalizer")
    sp.add_argument("--output", help="report JSON (default stdout)")
    sp.add_argument("--tsv", help="per-utterance tab-separated table")
    sp.add_argument("--figures", help="directory for the per-utterance figure")
    sp.set_defaults(func=cmd_score)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, KeyError) as e:
        print(f"owsm-kit {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

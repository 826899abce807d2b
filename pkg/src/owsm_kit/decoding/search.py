"""Greedy and joint CTC/attention beam search."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .ctc import CtcPrefixScorer, CtcPrefixState, ctc_forward_logprob, ctc_greedy
from .lattice import LogProbLattice
from .scorers import StepScorer

ALGORITHMS = ("ctc_greedy", "attention_greedy", "joint")


@dataclass(frozen=True)
class DecodeOptions:
    algorithm: str = "joint"
    beam_size: int = 10
    ctc_weight: float = 0.3
    max_len: int = 448
    n_best: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError("ctc_weight must be in [0, 1]")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.n_best < 1:
            raise ValueError("n_best must be >= 1")


def _weighted(weight: float, score: float) -> float:
    # 0 * -inf would be nan; a zero weight removes the term entirely
    return 0.0 if weight == 0.0 else weight * score


def _top_k(att: np.ndarray, ctc: np.ndarray, weight: float, ids: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best (score, id) pairs, best first."""
    total = np.zeros(len(ids)) if weight == 1.0 else (1.0 - weight) * att
    if weight != 0.0:
        total = total + weight * ctc
    return np.lexsort((ids, -total))[:k]


@dataclass
class Hypothesis:
    prefix: tuple[int, ...]
    att_score: float
    ctc_score: float  # prefix score while running, full-sequence score once ended
    ctc_weight: float
    ctc_state: CtcPrefixState | None = field(default=None, repr=False, compare=False)
    ended: bool = False

    @property
    def score(self) -> float:
        return _weighted(1.0 - self.ctc_weight, self.att_score) + _weighted(self.ctc_weight, self.ctc_score)

    @property
    def tokens(self) -> list[int]:
        return list(self.prefix)


def attention_greedy(
    scorer: StepScorer, context: Sequence[int], max_len: int, eos_id: int, suppress: Iterable[int] = ()
) -> tuple[list[int], bool]:
    """Append the argmax token until ``eos_id`` or ``max_len`` tokens.

    Returns the tokens after ``context`` (without EOS) and whether the
    sequence was cut at ``max_len``.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    suppress = list(suppress)
    seq = list(context)
    out: list[int] = []
    while len(out) < max_len:
        row = np.array(scorer(seq), dtype=np.float64)
        if suppress:
            row[suppress] = -np.inf
        k = int(np.argmax(row))
        if k == eos_id:
            return out, False
        out.append(k)
        seq.append(k)
    return out, True


def joint_beam_search(
    scorer: StepScorer,
    lattice: LogProbLattice,
    opts: DecodeOptions,
    *,
    eos_id: int,
    context: Sequence[int] = (),
    ctc_transparent: Iterable[int] = (),
) -> list[Hypothesis]:
    """Beam search on (1 - w) * attention + w * CTC prefix score.

    Every running hypothesis is expanded by every non-blank token.  An EOS
    expansion swaps the CTC prefix score for the full-sequence CTC score.
    Ids in ``ctc_transparent`` (timestamps) are scored by the attention side
    only and leave the CTC state untouched.  The top ``beam_size`` candidates
    survive each step; those ending in EOS are finalized.  A hypothesis that
    reaches ``max_len`` tokens may only emit EOS.  Ties rank the
    lexicographically smaller token sequence first.  No length penalty.

    The search stops early once the n-best finished hypotheses outscore every
    running one; this is exact for scorers that return log-probabilities.
    """
    if lattice.num_frames == 0:
        raise ValueError("empty lattice")
    if opts.beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    V = lattice.vocab_size
    if getattr(scorer, "vocab_size", V) != V:
        raise ValueError("scorer and lattice vocabulary sizes differ")
    w = opts.ctc_weight
    blank = lattice.blank_id
    transparent = set(ctc_transparent) - {eos_id, blank}
    ctc = CtcPrefixScorer(lattice) if w > 0 else None
    labels = np.array([k for k in range(V) if k != blank and k != eos_id and k not in transparent], dtype=int)
    others = np.array(sorted(transparent), dtype=int)
    context = list(context)

    running = [Hypothesis((), 0.0, 0.0, w, ctc.initial_state() if ctc else None)]
    ended: list[Hypothesis] = []
    for _ in range(opts.max_len + 1):
        cands: list[Hypothesis] = []
        for hyp in running:
            att = np.asarray(scorer(context + list(hyp.prefix)), dtype=np.float64)
            full = hyp.ctc_state.full if ctc else 0.0
            cands.append(Hypothesis(hyp.prefix + (eos_id,), hyp.att_score + att[eos_id], full, w, None, True))
            if len(hyp.prefix) >= opts.max_len:
                continue
            if ctc is not None and len(labels):
                psi, r = ctc.extend(hyp.ctc_state, labels)
            else:
                psi, r = np.zeros(len(labels)), None
            # only a hypothesis's own top beam_size expansions can survive the
            # global cut, so the rest never become objects
            for j in _top_k(hyp.att_score + att[labels], psi, w, labels, opts.beam_size):
                c = int(labels[j])
                state = None
                if r is not None:
                    state = CtcPrefixState(r[:, :, j], c, float(psi[j]), False)
                cands.append(Hypothesis(hyp.prefix + (c,), hyp.att_score + att[c], float(psi[j]), w, state))
            if len(others):
                keep = np.full(len(others), hyp.ctc_score)
                for j in _top_k(hyp.att_score + att[others], keep, w, others, opts.beam_size):
                    c = int(others[j])
                    cands.append(Hypothesis(hyp.prefix + (c,), hyp.att_score + att[c], hyp.ctc_score, w, hyp.ctc_state))
        cands.sort(key=lambda h: (-h.score, h.prefix))
        running = []
        for h in cands[: opts.beam_size]:
            if h.ended:
                h.prefix = h.prefix[:-1]
                h.ctc_state = None
                ended.append(h)
            else:
                if h.ctc_state is not None:
                    h.ctc_state = replace(h.ctc_state, r=h.ctc_state.r.copy())
                running.append(h)
        if not running:
            break
        # scores never rise under extension, so once the n-best finished
        # hypotheses beat every running one nothing can displace them
        if len(ended) >= opts.n_best:
            nth = sorted((h.score for h in ended), reverse=True)[opts.n_best - 1]
            if nth > max(h.score for h in running):
                break
    ended.sort(key=lambda h: (-h.score, h.prefix))
    return ended[: opts.n_best]


def decode(
    opts: DecodeOptions,
    *,
    lattice: LogProbLattice | None = None,
    scorer: StepScorer | None = None,
    context: Sequence[int] = (),
    eos_id: int,
    ctc_transparent: Iterable[int] = (),
) -> list[int]:
    """Run the algorithm named in ``opts`` and return the best token sequence."""
    if opts.algorithm == "ctc_greedy":
        if lattice is None:
            raise ValueError("ctc_greedy needs a lattice")
        return ctc_greedy(lattice)
    if scorer is None:
        raise ValueError(f"{opts.algorithm} needs a scorer")
    if opts.algorithm == "attention_greedy":
        suppress = [lattice.blank_id] if lattice is not None else []
        return attention_greedy(scorer, context, opts.max_len, eos_id, suppress)[0]
    if lattice is None:
        raise ValueError("joint decoding needs a lattice")
    hyps = joint_beam_search(scorer, lattice, opts, eos_id=eos_id, context=context, ctc_transparent=ctc_transparent)
    return hyps[0].tokens if hyps else []


def combined_score(
    tokens: Sequence[int],
    scorer: StepScorer,
    lattice: LogProbLattice,
    ctc_weight: float,
    *,
    eos_id: int,
    context: Sequence[int] = (),
    ctc_transparent: Iterable[int] = (),
) -> float:
    """Score a complete hypothesis from scratch (attention sum incl. EOS, full CTC score)."""
    seq = list(context)
    att = 0.0
    for t in list(tokens) + [eos_id]:
        att += float(scorer(seq)[t])
        seq.append(t)
    transparent = set(ctc_transparent)
    ctc = ctc_forward_logprob(lattice, [t for t in tokens if t not in transparent]) if ctc_weight > 0 else 0.0
    return _weighted(1.0 - ctc_weight, att) + _weighted(ctc_weight, ctc)

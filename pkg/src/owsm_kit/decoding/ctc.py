"""CTC best-path decoding, the forward algorithm and incremental prefix scoring."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lattice import LogProbLattice

NEG_INF = -np.inf


def ctc_greedy(lattice: LogProbLattice) -> list[int]:
    """Frame argmax (lowest id on ties), collapse repeats, drop blanks."""
    best = np.argmax(lattice.frames, axis=1)
    out, prev = [], None
    for k in best.tolist():
        if k != prev and k != lattice.blank_id:
            out.append(k)
        prev = k
    return out


def ctc_forward_logprob(lattice: LogProbLattice, labels: Sequence[int]) -> float:
    """log p(labels | lattice) summed over all alignments; -inf when infeasible."""
    x = lattice.frames
    blank = lattice.blank_id
    labels = list(labels)
    if blank in labels:
        raise ValueError("labels must not contain the blank id")
    T = x.shape[0]
    repeats = sum(a == b for a, b in zip(labels, labels[1:]))
    if len(labels) + repeats > T:
        return float("-inf")
    if not labels:
        return float(x[:, blank].sum())
    ext = [blank]
    for lab in labels:
        ext += [lab, blank]
    ext = np.asarray(ext)
    S = len(ext)
    # skip transition s-2 -> s allowed into a label that differs from the previous label
    skip = np.zeros(S, dtype=bool)
    skip[3::2] = ext[3::2] != ext[1:-2:2]
    alpha = np.full(S, NEG_INF)
    alpha[0] = x[0, blank]
    alpha[1] = x[0, ext[1]]
    for t in range(1, T):
        prev = alpha
        stay = prev
        step = np.concatenate(([NEG_INF], prev[:-1]))
        jump = np.where(skip, np.concatenate(([NEG_INF, NEG_INF], prev[:-2])), NEG_INF)
        alpha = np.logaddexp(np.logaddexp(stay, step), jump) + x[t, ext]
    return float(np.logaddexp(alpha[-1], alpha[-2]))


@dataclass(frozen=True)
class CtcPrefixState:
    """Forward variables of one prefix: r[t, 0] ends in a label, r[t, 1] in blank."""

    r: np.ndarray  # (T, 2)
    last: int | None  # last CTC label of the prefix
    psi: float  # log prefix probability
    empty: bool

    @property
    def full(self) -> float:
        """log p(prefix is the complete label sequence)."""
        return float(np.logaddexp(self.r[-1, 0], self.r[-1, 1]))


class CtcPrefixScorer:
    """Frame-synchronous CTC prefix probabilities for hybrid decoding.

    For a prefix g with forward variables r^n(g), r^b(g) and a label c, the
    extension h = g + c is computed as::

        phi_t     = r^b_t(g) if c == last(g) else r^b_t(g) (+) r^n_t(g)
        r^n_1(h)  = x_1(c) if g is empty else -inf
        r^n_t(h)  = (r^n_{t-1}(h) (+) phi_{t-1}) + x_t(c)
        r^b_t(h)  = (r^n_{t-1}(h) (+) r^b_{t-1}(h)) + x_t(blank)
        psi(h)    = r^n_1(h) (+) sum_t (phi_{t-1} + x_t(c))

    where (+) is log-add.  The empty prefix starts from r^n = -inf and
    r^b_t = cumulative blank log probability, so psi(empty) = 0.
    """

    def __init__(self, lattice: LogProbLattice):
        if lattice.num_frames == 0:
            raise ValueError("empty lattice")
        self.x = lattice.frames
        self.blank = lattice.blank_id

    def initial_state(self) -> CtcPrefixState:
        r = np.full((self.x.shape[0], 2), NEG_INF)
        r[:, 1] = np.cumsum(self.x[:, self.blank])
        return CtcPrefixState(r, None, 0.0, True)

    def extend(self, state: CtcPrefixState, labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Score all ``labels`` as extensions of ``state``.

        Returns (psi of shape (C,), forward variables of shape (T, 2, C)).
        """
        labels = np.asarray(labels, dtype=int)
        if np.any(labels == self.blank):
            raise ValueError("cannot extend a prefix with the blank id")
        x = self.x
        T, C = x.shape[0], len(labels)
        xs = x[:, labels]  # (T, C)
        r_prev = state.r
        both = np.logaddexp(r_prev[:, 0], r_prev[:, 1])
        phi = np.repeat(both[:, None], C, axis=1)
        if state.last is not None:
            phi[:, labels == state.last] = r_prev[:, 1:2]
        r = np.full((T, 2, C), NEG_INF)
        if state.empty:
            r[0, 0] = xs[0]
        for t in range(1, T):
            r[t, 0] = np.logaddexp(r[t - 1, 0], phi[t - 1]) + xs[t]
            r[t, 1] = np.logaddexp(r[t - 1, 0], r[t - 1, 1]) + x[t, self.blank]
        terms = np.vstack([r[0:1, 0], phi[:-1] + xs[1:]])
        psi = np.logaddexp.reduce(terms, axis=0)
        return psi, r

    def extend_one(self, state: CtcPrefixState, label: int) -> CtcPrefixState:
        psi, r = self.extend(state, [label])
        return CtcPrefixState(r[:, :, 0].copy(), label, float(psi[0]), False)

    def state_for(self, labels: Sequence[int]) -> CtcPrefixState:
        state = self.initial_state()
        for lab in labels:
            state = self.extend_one(state, lab)
        return state

    def prefix_logprob(self, labels: Sequence[int]) -> float:
        return self.state_for(labels).psi

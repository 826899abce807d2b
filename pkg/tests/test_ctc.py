import json
import math

import numpy as np
import pytest

from owsm_kit.decoding import (
    CtcPrefixScorer,
    LogProbLattice,
    ctc_forward_logprob,
    ctc_greedy,
)

from oracles import ctc_distribution, label_sequences, prefix_mass, random_probs


def lattice_from_argmax(argmax, V=4, blank=0):
    return LogProbLattice.one_hot(argmax, V, blank, peak=0.9)


@pytest.mark.parametrize(
    "argmax,expected",
    [([1, 1, 0, 2, 2], [1, 2]), ([0, 0, 0], []), ([1, 0, 1], [1, 1]), ([3], [3])],
)
def test_greedy_collapse(argmax, expected):
    assert ctc_greedy(lattice_from_argmax(argmax)) == expected


def test_greedy_on_canonical_alignment(rng):
    for _ in range(50):
        labels = list(rng.integers(1, 5, size=int(rng.integers(0, 6))))
        align = []
        for i, lab in enumerate(labels):
            if i and labels[i - 1] == lab:
                align.append(0)
            align += [int(lab)] * int(rng.integers(1, 3))
        align += [0] * int(rng.integers(0, 3))
        if not align:
            align = [0]
        assert ctc_greedy(LogProbLattice.one_hot(align, 5, 0)) == labels


def test_forward_hand_examples():
    one = LogProbLattice.from_probs([[0.4, 0.6]], 0)
    assert ctc_forward_logprob(one, [1]) == pytest.approx(math.log(0.6))
    two = LogProbLattice.from_probs([[0.4, 0.6], [0.4, 0.6]], 0)
    # aa, a-, -a
    assert ctc_forward_logprob(two, [1]) == pytest.approx(math.log(0.84), abs=1e-12)
    assert ctc_forward_logprob(two, []) == pytest.approx(math.log(0.16), abs=1e-12)


def test_infeasible_is_minus_inf():
    lat = LogProbLattice.from_probs([[0.5, 0.5], [0.5, 0.5]], 0)
    assert ctc_forward_logprob(lat, [1, 1]) == -math.inf
    assert ctc_forward_logprob(lat, [1, 1, 1]) == -math.inf


def test_forward_matches_brute_force(rng):
    worst = 0.0
    for _ in range(100):
        T, V = int(rng.integers(1, 6)), int(rng.integers(2, 5))
        probs = random_probs(rng, T, V)
        lat = LogProbLattice.from_probs(probs, 0)
        dist = ctc_distribution(probs, 0)
        for seq in label_sequences(range(1, V), 3):
            got = math.exp(ctc_forward_logprob(lat, seq))
            worst = max(worst, abs(got - dist.get(seq, 0.0)))
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)
    assert worst <= 1e-9


def test_long_lattice_no_underflow(rng):
    T = 10_000
    probs = random_probs(rng, T, 3)
    lat = LogProbLattice.from_probs(probs, 0)
    lp = ctc_forward_logprob(lat, [1, 2, 1] * 10)
    assert math.isfinite(lp) and lp < -1000


def test_prefix_scores_match_brute_force(rng):
    for _ in range(50):
        T, V = int(rng.integers(1, 6)), int(rng.integers(2, 5))
        probs = random_probs(rng, T, V)
        dist = ctc_distribution(probs, 0)
        scorer = CtcPrefixScorer(LogProbLattice.from_probs(probs, 0))
        for g in label_sequences(range(1, V), 3):
            state = scorer.state_for(g)
            assert math.exp(state.psi) == pytest.approx(prefix_mass(dist, g), abs=1e-9)
            assert math.exp(state.full) == pytest.approx(dist.get(tuple(g), 0.0), abs=1e-9)


def test_prefix_consistency_identity(rng):
    for _ in range(50):
        T, V = int(rng.integers(1, 7)), int(rng.integers(2, 5))
        scorer = CtcPrefixScorer(LogProbLattice.from_probs(random_probs(rng, T, V), 0))
        for g in label_sequences(range(1, V), 2):
            state = scorer.state_for(g)
            psi, _ = scorer.extend(state, list(range(1, V)))
            rhs = math.exp(state.full) + np.exp(psi).sum()
            assert math.exp(state.psi) == pytest.approx(rhs, abs=1e-9)


def test_extend_rejects_blank():
    scorer = CtcPrefixScorer(LogProbLattice.from_probs([[0.5, 0.5]], 0))
    with pytest.raises(ValueError):
        scorer.extend(scorer.initial_state(), [0])


def test_empty_prefix_has_unit_mass():
    scorer = CtcPrefixScorer(LogProbLattice.from_probs([[0.3, 0.7], [0.9, 0.1]], 0))
    assert scorer.initial_state().psi == 0.0
    assert scorer.initial_state().full == pytest.approx(math.log(0.27))


def test_lattice_validation_and_files(tmp_path):
    with pytest.raises(ValueError):
        LogProbLattice(np.log(np.full((2, 3), 0.5)), 0)
    with pytest.raises(ValueError):
        LogProbLattice(np.log(np.full((2, 2), 0.5)), 2)
    lat = LogProbLattice.from_probs(np.array([[1.0, 0.0], [0.25, 0.75]]), 0)
    (tmp_path / "l.json").write_text(json.dumps(lat.to_json()))
    (tmp_path / "l.bin").write_bytes(lat.to_bytes())
    for name in ("l.json", "l.bin"):
        back = LogProbLattice.load(tmp_path / name)
        assert back.blank_id == 0
        assert ctc_forward_logprob(back, [1]) == pytest.approx(ctc_forward_logprob(lat, [1]), abs=1e-6)

from .ctc import CtcPrefixScorer, CtcPrefixState, ctc_forward_logprob, ctc_greedy
from .lattice import LogProbLattice
from .scorers import RandomScorer, StepScorer, TableScorer, log_normalize, peaked_row, scripted_scorer
from .search import DecodeOptions, Hypothesis, attention_greedy, combined_score, decode, joint_beam_search

__all__ = [
    "CtcPrefixScorer",
    "CtcPrefixState",
    "DecodeOptions",
    "Hypothesis",
    "LogProbLattice",
    "RandomScorer",
    "StepScorer",
    "TableScorer",
    "attention_greedy",
    "combined_score",
    "ctc_forward_logprob",
    "ctc_greedy",
    "decode",
    "joint_beam_search",
    "log_normalize",
    "peaked_row",
    "scripted_scorer",
]

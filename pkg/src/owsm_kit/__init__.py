"""Whisper-style speech pipeline toolkit.

Multitask token format, BPE, training-data preparation, log-mel features,
CTC/attention decoding, long-form transcription and evaluation metrics.
"""

from .bpe import BpeModel, train_bpe
from .config import PipelineConfig, resolve_config
from .data_prep import (
    LongFormSample,
    UtteranceSegment,
    concatenate_segments,
    filter_by_length,
    partition_shards,
    sample_transcripts,
)
from .features import FeatureMatrix, CmvnStats, accumulate_cmvn, apply_cmvn, log_mel, reduce_time_resolution
from .longform import LongFormResult, transcribe_longform
from .normalizers import normalize_text
from .scoring import char_error_rate, corpus_bleu, lid_accuracy, word_error_rate
from .tokens import (
    MultitaskRecord,
    Segment,
    Vocabulary,
    build_vocabulary,
    decode_tokens,
    encode_record,
    parse_tokens,
    render_tokens,
)

__version__ = "0.1.0"

__all__ = [
    "BpeModel",
    "CmvnStats",
    "FeatureMatrix",
    "LongFormResult",
    "LongFormSample",
    "MultitaskRecord",
    "PipelineConfig",
    "Segment",
    "UtteranceSegment",
    "Vocabulary",
    "accumulate_cmvn",
    "apply_cmvn",
    "build_vocabulary",
    "char_error_rate",
    "concatenate_segments",
    "corpus_bleu",
    "decode_tokens",
    "encode_record",
    "filter_by_length",
    "lid_accuracy",
    "log_mel",
    "normalize_text",
    "parse_tokens",
    "partition_shards",
    "reduce_time_resolution",
    "render_tokens",
    "resolve_config",
    "sample_transcripts",
    "train_bpe",
    "transcribe_longform",
    "word_error_rate",
]

"""Log-Mel features, global CMVN, SpecAugment and frame-rate reduction.

Conventions (fixed so results are reproducible): 16 kHz input, 25 ms
periodic Hann window, 10 ms hop, 512-point FFT, power spectrum, 80 HTK-style
Mel triangles (2595 * log10(1 + f / 700)) with unit peak spanning 0 Hz to
Nyquist, natural log floored at 1e-10.  No centre padding, so
``T = 1 + (N - 400) // 160``.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
N_MELS = 80
WIN_SECONDS = 0.025
HOP_SECONDS = 0.010
N_FFT = 512
LOG_FLOOR = 1e-10
VAR_FLOOR = 1e-8
MAGIC = b"OWFM"


@dataclass(frozen=True)
class FeatureMatrix:
    frames: np.ndarray  # (T, D)
    frame_shift: float = HOP_SECONDS
    sample_rate: int = SAMPLE_RATE

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def to_json(self) -> dict:
        return {
            "frame_shift": self.frame_shift,
            "sample_rate": self.sample_rate,
            "frames": self.frames.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureMatrix":
        frames = np.asarray(obj["frames"], dtype=np.float64)
        if frames.ndim != 2:
            frames = frames.reshape(len(frames), -1)
        return cls(frames, float(obj["frame_shift"]), int(obj["sample_rate"]))

    def to_bytes(self) -> bytes:
        t, d = self.frames.shape
        return MAGIC + struct.pack("<II", t, d) + self.frames.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, frame_shift: float = HOP_SECONDS, sample_rate: int = SAMPLE_RATE):
        if data[:4] != MAGIC:
            raise ValueError("not an OWFM feature file")
        t, d = struct.unpack("<II", data[4:12])
        body = data[12:]
        if len(body) != 4 * t * d:
            raise ValueError(f"OWFM body has {len(body)} bytes, header says {t}x{d}")
        frames = np.frombuffer(body, dtype="<f4").reshape(t, d).astype(np.float64)
        return cls(frames, frame_shift, sample_rate)

    def save(self, path: str | Path, binary: bool = False) -> None:
        from .io import atomic_write_bytes, atomic_write_text

        if binary:
            atomic_write_bytes(path, self.to_bytes())
        else:
            atomic_write_text(path, json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "FeatureMatrix":
        data = Path(path).read_bytes()
        if data[:4] == MAGIC:
            return cls.from_bytes(data)
        return cls.from_json(json.loads(data.decode("utf-8")))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int = N_MELS, rate: int = SAMPLE_RATE) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(rate / 2), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, rate: int = SAMPLE_RATE) -> np.ndarray:
    """(n_mels, n_fft // 2 + 1) triangles with unit peak."""
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(rate / 2), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def num_frames(n_samples: int, rate: int = SAMPLE_RATE) -> int:
    win, hop = int(round(WIN_SECONDS * rate)), int(round(HOP_SECONDS * rate))
    return 1 + (n_samples - win) // hop


def log_mel(audio: np.ndarray, rate: int = SAMPLE_RATE) -> FeatureMatrix:
    audio = np.asarray(audio, dtype=np.float64)
    win, hop = int(round(WIN_SECONDS * rate)), int(round(HOP_SECONDS * rate))
    if audio.ndim != 1:
        raise ValueError("expected mono audio")
    if len(audio) < win:
        raise ValueError(f"audio has {len(audio)} samples, shorter than one {win}-sample window")
    n_fft = max(N_FFT, 1 << (win - 1).bit_length())
    frames = np.lib.stride_tricks.sliding_window_view(audio, win)[::hop]
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(win) / win)  # periodic Hann
    power = np.abs(np.fft.rfft(frames * window, n=n_fft, axis=1)) ** 2
    mel = power @ mel_filterbank(N_MELS, n_fft, rate).T
    return FeatureMatrix(np.log(np.maximum(mel, LOG_FLOOR)), hop / rate, rate)


@dataclass(frozen=True)
class CmvnStats:
    """Raw first and second moments; merging is plain addition."""

    sum: np.ndarray
    sum_sq: np.ndarray
    count: int

    @classmethod
    def empty(cls, dim: int = N_MELS) -> "CmvnStats":
        return cls(np.zeros(dim), np.zeros(dim), 0)

    @classmethod
    def of(cls, f: FeatureMatrix) -> "CmvnStats":
        x = f.frames
        return cls(x.sum(axis=0), (x * x).sum(axis=0), x.shape[0])

    def merge(self, other: "CmvnStats") -> "CmvnStats":
        if self.sum.shape != other.sum.shape:
            raise ValueError("dimension mismatch")
        return CmvnStats(self.sum + other.sum, self.sum_sq + other.sum_sq, self.count + other.count)

    __add__ = merge

    @property
    def mean(self) -> np.ndarray:
        return self.sum / self.count

    @property
    def variance(self) -> np.ndarray:
        """Population variance with near-zero entries clamped to 1e-8."""
        if self.count <= 0:
            raise ValueError("no frames accumulated")
        mean = self.mean
        var = self.sum_sq / self.count - mean * mean
        low = var < VAR_FLOOR
        if low.any():
            logger.warning("clamping variance of %d constant feature dims to %g", int(low.sum()), VAR_FLOOR)
            var = np.where(low, VAR_FLOOR, var)
        return var

    def to_json(self) -> dict:
        return {
            "mean": self.mean.tolist() if self.count else None,
            "variance": self.variance.tolist() if self.count else None,
            "count": self.count,
            "sum": self.sum.tolist(),
            "sum_sq": self.sum_sq.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CmvnStats":
        if "sum" in obj:
            return cls(np.asarray(obj["sum"], float), np.asarray(obj["sum_sq"], float), int(obj["count"]))
        n = int(obj["count"])
        mean, var = np.asarray(obj["mean"], float), np.asarray(obj["variance"], float)
        return cls(mean * n, (var + mean * mean) * n, n)


def accumulate_cmvn(features: Iterable[FeatureMatrix]) -> CmvnStats:
    stats = None
    for f in features:
        s = CmvnStats.of(f)
        stats = s if stats is None else stats.merge(s)
    if stats is None:
        raise ValueError("no feature matrices given")
    return stats


def apply_cmvn(f: FeatureMatrix, stats: CmvnStats) -> FeatureMatrix:
    if stats.count <= 0:
        raise ValueError("CMVN stats are empty")
    return replace(f, frames=(f.frames - stats.mean) / np.sqrt(stats.variance))


def invert_cmvn(f: FeatureMatrix, stats: CmvnStats) -> FeatureMatrix:
    return replace(f, frames=f.frames * np.sqrt(stats.variance) + stats.mean)


def spec_augment(
    f: FeatureMatrix,
    n_time_masks: int = 2,
    max_time_width: int = 40,
    n_freq_masks: int = 2,
    max_freq_width: int = 27,
    seed: int = 0,
) -> FeatureMatrix:
    """Zero out random time and frequency bands (0 is the post-CMVN mean).

    Each mask width is drawn uniformly from [0, max_width] and its start
    uniformly over the positions where it fits.
    """
    t, d = f.frames.shape
    if max_time_width > t or max_freq_width > d:
        raise ValueError("mask width exceeds feature dimensions")
    rng = np.random.default_rng(seed)
    out = f.frames.copy()
    for _ in range(n_freq_masks):
        w = int(rng.integers(0, max_freq_width + 1))
        s = int(rng.integers(0, d - w + 1))
        out[:, s : s + w] = 0.0
    for _ in range(n_time_masks):
        w = int(rng.integers(0, max_time_width + 1))
        s = int(rng.integers(0, t - w + 1))
        out[s : s + w, :] = 0.0
    return replace(f, frames=out)


def reduce_time_resolution(f: FeatureMatrix, factor: int) -> FeatureMatrix:
    """Stack ``factor`` consecutive frames; trailing frames that do not fill a group are dropped."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    t, d = f.frames.shape
    keep = (t // factor) * factor
    stacked = f.frames[:keep].reshape(t // factor, factor * d)
    return replace(f, frames=stacked, frame_shift=f.frame_shift * factor)

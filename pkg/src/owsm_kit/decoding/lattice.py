from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

NORM_TOL = 1e-5
MAGIC = b"OWLP"


@dataclass(frozen=True)
class LogProbLattice:
    """Per-frame CTC log posteriors, shape (T, V)."""

    frames: np.ndarray
    blank_id: int
    frame_shift: float = 0.04

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise ValueError("lattice frames must be a (T, V) matrix")
        if not 0 <= self.blank_id < frames.shape[1]:
            raise ValueError(f"blank_id {self.blank_id} outside vocabulary of size {frames.shape[1]}")
        if frames.shape[0]:
            err = np.abs(logsumexp(frames, axis=1)).max()
            if err > NORM_TOL:
                raise ValueError(f"lattice rows are not normalized (max |logsumexp| = {err:.2e})")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.frames.shape[1]

    @classmethod
    def from_probs(cls, probs, blank_id: int, frame_shift: float = 0.04) -> "LogProbLattice":
        probs = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return cls(np.log(probs / probs.sum(axis=1, keepdims=True)), blank_id, frame_shift)

    @classmethod
    def one_hot(cls, alignment, vocab_size: int, blank_id: int, peak: float = 0.999, frame_shift: float = 0.04):
        """Lattice whose per-frame argmax follows ``alignment``; the rest of the mass is spread evenly."""
        probs = np.full((len(alignment), vocab_size), (1.0 - peak) / (vocab_size - 1))
        probs[np.arange(len(alignment)), list(alignment)] = peak
        return cls.from_probs(probs, blank_id, frame_shift)

    def to_json(self) -> dict:
        rows = [[x if np.isfinite(x) else -1e30 for x in row] for row in self.frames.tolist()]
        return {"blank_id": self.blank_id, "frame_shift": self.frame_shift, "frames": rows}

    @classmethod
    def from_json(cls, obj: dict) -> "LogProbLattice":
        frames = np.asarray(obj["frames"], dtype=np.float64)
        frames = np.where(frames <= -1e30, -np.inf, frames)
        return cls(frames, int(obj["blank_id"]), float(obj.get("frame_shift", 0.04)))

    def to_bytes(self) -> bytes:
        t, v = self.frames.shape
        return MAGIC + struct.pack("<IIIf", t, v, self.blank_id, self.frame_shift) + self.frames.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "LogProbLattice":
        if data[:4] != MAGIC:
            raise ValueError("not a binary lattice file")
        t, v, blank, shift = struct.unpack("<IIIf", data[4:20])
        frames = np.frombuffer(data[20:], dtype="<f4").reshape(t, v).astype(np.float64)
        return cls(frames, blank, round(float(shift), 6))

    @classmethod
    def load(cls, path: str | Path) -> "LogProbLattice":
        data = Path(path).read_bytes()
        if data[:4] == MAGIC:
            return cls.from_bytes(data)
        return cls.from_json(json.loads(data.decode("utf-8")))

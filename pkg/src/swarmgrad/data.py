"""Synthetic sequence datasets, frame selection, batching, and the
accuracy metric.

The generator produces frequency-coded classes: every frame of a class-c
sample lies on the same sinusoidal manifold, and only the phase progression
across consecutive frames identifies the class. A frame-order-agnostic
classifier therefore scores near chance, which is exactly the property the
temporal models are supposed to exploit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .models.base import SequenceBatch

__all__ = ["SyntheticVideo", "generate_dataset", "select_frames_shadow",
           "select_frames_stride", "center_crop", "accuracy",
           "to_sequence_batch", "save_dataset", "load_dataset"]


@dataclass
class SyntheticVideo:
    """A variable-length sequence of feature vectors with a class label."""

    frames: np.ndarray  # [length, feature_dim]
    label: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ArgumentError(f"frames must be [length >= 1, features], got {self.frames.shape}")

    def __len__(self) -> int:
        return self.frames.shape[0]


def generate_dataset(num_classes: int, samples_per_class: int, min_len: int,
                     max_len: int, feature_dim: int, noise_sigma: float,
                     seed: int) -> list[SyntheticVideo]:
    """Frequency-coded sinusoid classes.

    Frame t of a class-c sample is sin(2 pi (c+1) t / period + 2 pi j / g)
    over features j, plus Gaussian noise; the period is 4 * num_classes so
    every class stays below the Nyquist rate of the frame grid. Sample
    lengths are uniform on [min_len, max_len]. Bitwise reproducible given
    the seed.
    """
    if min_len < 1:
        raise ArgumentError(f"min_len must be >= 1, got {min_len}")
    if max_len < min_len:
        raise ArgumentError(f"max_len {max_len} < min_len {min_len}")
    if num_classes < 1 or samples_per_class < 1 or feature_dim < 1:
        raise ArgumentError("num_classes, samples_per_class, feature_dim must be >= 1")
    if noise_sigma < 0:
        raise ArgumentError("noise_sigma must be nonnegative")

    rng = np.random.default_rng(seed)
    period = 4.0 * num_classes
    feat_phase = 2.0 * np.pi * np.arange(feature_dim) / feature_dim
    videos = []
    for c in range(num_classes):
        freq = 2.0 * np.pi * (c + 1) / period
        for _ in range(samples_per_class):
            length = int(rng.integers(min_len, max_len + 1))
            t = np.arange(length)[:, None]
            frames = np.sin(freq * t + feat_phase[None, :])
            if noise_sigma > 0:
                frames = frames + rng.normal(0.0, noise_sigma, size=frames.shape)
            videos.append(SyntheticVideo(frames=frames, label=c))
    return videos


def select_frames_shadow(frames: np.ndarray, max_seq_len: int) -> np.ndarray:
    """Truncate to the first max_seq_len frames; shorter sequences repeat
    their last frame until the target length."""
    frames = np.asarray(frames, dtype=float)
    if max_seq_len < 1:
        raise ArgumentError(f"max_seq_len must be >= 1, got {max_seq_len}")
    out = frames[:max_seq_len]
    if out.shape[0] < max_seq_len:
        pad = np.repeat(out[-1:], max_seq_len - out.shape[0], axis=0)
        out = np.concatenate([out, pad], axis=0)
    return out


def select_frames_stride(frames: np.ndarray, target_count: int) -> np.ndarray:
    """Sample every floor(length / target_count) frames starting at 0,
    covering the sequence; pads with the last frame when too short."""
    frames = np.asarray(frames, dtype=float)
    if target_count < 1:
        raise ArgumentError(f"target_count must be >= 1, got {target_count}")
    length = frames.shape[0]
    step = max(length // target_count, 1)
    idx = np.arange(0, length, step)[:target_count]
    out = frames[idx]
    if out.shape[0] < target_count:
        pad = np.repeat(out[-1:], target_count - out.shape[0], axis=0)
        out = np.concatenate([out, pad], axis=0)
    return out


def center_crop(frame: np.ndarray, side: int) -> np.ndarray:
    """Square center crop of an [H, W, C] frame; odd remainders drop the
    extra row/column at the bottom/right."""
    frame = np.asarray(frame)
    if frame.ndim != 3:
        raise ArgumentError(f"expected [H, W, C] frame, got shape {frame.shape}")
    h, w, _ = frame.shape
    if not 1 <= side <= min(h, w):
        raise ArgumentError(f"crop side {side} must lie in [1, {min(h, w)}]")
    top = (h - side) // 2
    left = (w - side) // 2
    return frame[top:top + side, left:left + side, :]


def accuracy(predictions, labels) -> float:
    """Fraction of matching entries. Undefined (error) on empty input."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ArgumentError(f"shape mismatch {predictions.shape} vs {labels.shape}")
    if predictions.size == 0:
        raise ArgumentError("accuracy of an empty prediction set is undefined")
    return float(np.mean(predictions == labels))


_SELECTORS = {"shadow": select_frames_shadow, "stride": select_frames_stride}


def to_sequence_batch(videos: list[SyntheticVideo], seq_len: int,
                      num_classes: int, selector: str = "shadow") -> SequenceBatch:
    """Fixed-length collation of a video list via a frame selector."""
    try:
        select = _SELECTORS[selector]
    except KeyError:
        raise ArgumentError(f"selector must be one of {sorted(_SELECTORS)}") from None
    inputs = np.stack([select(v.frames, seq_len) for v in videos])
    labels = np.array([v.label for v in videos], dtype=int)
    return SequenceBatch(inputs, labels, num_classes)


def save_dataset(videos: list[SyntheticVideo], path) -> None:
    """One line per sample: label, frame count, then the row-major frame
    values as decimal text (repr round-trips float64 exactly)."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in videos:
            flat = ",".join(repr(float(x)) for x in v.frames.ravel())
            fh.write(f"{v.label},{len(v)},{flat}\n")


def load_dataset(path) -> list[SyntheticVideo]:
    videos = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 3:
                raise ArgumentError(f"{path}:{lineno}: malformed record")
            label, length = int(parts[0]), int(parts[1])
            values = np.array([float(x) for x in parts[2:]])
            if length < 1 or values.size % length:
                raise ArgumentError(f"{path}:{lineno}: frame count {length} "
                                    f"does not divide {values.size} values")
            videos.append(SyntheticVideo(values.reshape(length, -1), label))
    return videos

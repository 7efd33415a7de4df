"""Differentiable loss providers: the model protocol, flat parameter
packing, batch containers, and the finite-difference gradient oracle."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError

__all__ = ["LossModel", "ParamLayout", "SequenceBatch", "ImageBatch",
           "finite_diff_gradient"]


class LossModel(ABC):
    """A differentiable objective over a flat parameter vector.

    ``evaluate`` and ``gradient`` are deterministic given (params, batch)
    unless ``train=True`` enables the stochastic layers, which draw from the
    caller-supplied generator (never global state), so a model instance is
    immutable and safe to share across threads.
    """

    dim: int

    @abstractmethod
    def init_params(self, seed: int) -> np.ndarray:
        """Fresh parameter vector of length ``dim``."""

    @abstractmethod
    def value_and_gradient(self, params: np.ndarray, batch, train: bool = False,
                           rng: np.random.Generator | None = None) -> tuple[float, np.ndarray]:
        """Loss and its gradient at ``params`` in one pass."""

    def evaluate(self, params: np.ndarray, batch, train: bool = False,
                 rng: np.random.Generator | None = None) -> float:
        return self.value_and_gradient(params, batch, train=train, rng=rng)[0]

    def gradient(self, params: np.ndarray, batch, train: bool = False,
                 rng: np.random.Generator | None = None) -> np.ndarray:
        return self.value_and_gradient(params, batch, train=train, rng=rng)[1]

    def _check_params(self, params: np.ndarray):
        if params.shape != (self.dim,):
            raise ArgumentError(
                f"expected parameter vector of shape ({self.dim},), got {params.shape}")


class ParamLayout:
    """Maps named arrays onto contiguous slices of one flat vector."""

    def __init__(self, shapes: dict[str, tuple[int, ...]]):
        self._shapes = dict(shapes)
        self._slices: dict[str, slice] = {}
        offset = 0
        for name, shape in self._shapes.items():
            n = int(np.prod(shape, dtype=int)) if shape else 1
            self._slices[name] = slice(offset, offset + n)
            offset += n
        self.size = offset

    def names(self) -> list[str]:
        return list(self._shapes)

    def shape(self, name: str) -> tuple[int, ...]:
        return self._shapes[name]

    def unpack(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        """Views into ``theta``, one per named array (no copies)."""
        if theta.shape != (self.size,):
            raise ArgumentError(f"expected flat vector of length {self.size}, got {theta.shape}")
        return {name: theta[sl].reshape(self._shapes[name])
                for name, sl in self._slices.items()}

    def zeros(self) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """A zero vector plus its unpacked views, for gradient accumulation."""
        flat = np.zeros(self.size)
        return flat, self.unpack(flat)


@dataclass
class SequenceBatch:
    """A batch of fixed-length feature sequences with integer class labels."""

    inputs: np.ndarray  # [batch, time, features]
    labels: np.ndarray  # [batch] ints
    num_classes: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.inputs.ndim != 3:
            raise ArgumentError(f"inputs must be [batch, time, features], got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ArgumentError("one label per sequence required")
        if self.num_classes < 1 or ((self.labels < 0) | (self.labels >= self.num_classes)).any():
            raise ArgumentError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, indices: np.ndarray) -> "SequenceBatch":
        return SequenceBatch(self.inputs[indices], self.labels[indices], self.num_classes)


@dataclass
class ImageBatch:
    """A batch of small images for the convolutional toy net."""

    inputs: np.ndarray  # [batch, height, width, channels]
    labels: np.ndarray  # [batch] ints
    num_classes: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.inputs.ndim != 4:
            raise ArgumentError(f"inputs must be [batch, h, w, c], got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ArgumentError("one label per image required")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, indices: np.ndarray) -> "ImageBatch":
        return ImageBatch(self.inputs[indices], self.labels[indices], self.num_classes)


def finite_diff_gradient(model: LossModel, params: np.ndarray, batch,
                         eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, component by component.

    Evaluates with stochastic layers disabled, so the result is comparable
    to the analytic gradient of the deterministic forward pass.
    """
    params = np.asarray(params, dtype=float)
    grad = np.zeros_like(params)
    probe = params.copy()
    for i in range(params.shape[0]):
        orig = probe[i]
        probe[i] = orig + eps
        up = model.evaluate(probe, batch)
        probe[i] = orig - eps
        down = model.evaluate(probe, batch)
        probe[i] = orig
        grad[i] = (up - down) / (2.0 * eps)
    return grad

"""Analytic benchmark objectives for desk-scale verification of the swarm
machinery: sphere, Rosenbrock, Rastrigin, each with closed-form gradients
and a LossModel wrapper that ignores data batches."""

from __future__ import annotations

import numpy as np

from ..errors import ArgumentError
from .base import LossModel

__all__ = ["sphere_eval_grad", "rosenbrock_eval_grad", "rastrigin_eval_grad",
           "BenchmarkModel", "benchmark_model", "DiagonalQuadratic"]


def sphere_eval_grad(x: np.ndarray) -> tuple[float, np.ndarray]:
    """sum(x^2); gradient 2x."""
    x = np.asarray(x, dtype=float)
    return float(x @ x), 2.0 * x


def rosenbrock_eval_grad(x: np.ndarray) -> tuple[float, np.ndarray]:
    """sum of (1-x_i)^2 + 100 (x_{i+1} - x_i^2)^2 over consecutive pairs."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        raise ArgumentError("rosenbrock needs dimension >= 2")
    head, tail = x[:-1], x[1:]
    gap = tail - head ** 2
    loss = float(np.sum((1.0 - head) ** 2 + 100.0 * gap ** 2))
    grad = np.zeros_like(x)
    grad[:-1] += -2.0 * (1.0 - head) - 400.0 * head * gap
    grad[1:] += 200.0 * gap
    return loss, grad


def rastrigin_eval_grad(x: np.ndarray) -> tuple[float, np.ndarray]:
    """sum of x_i^2 + 10 (1 - cos 2 pi x_i); many local minima, global at 0."""
    x = np.asarray(x, dtype=float)
    two_pi = 2.0 * np.pi
    loss = float(np.sum(x ** 2 + 10.0 * (1.0 - np.cos(two_pi * x))))
    grad = 2.0 * x + 10.0 * two_pi * np.sin(two_pi * x)
    return loss, grad


_BENCHMARKS = {
    "sphere": (sphere_eval_grad, 5.12),
    "rosenbrock": (rosenbrock_eval_grad, 2.0),
    "rastrigin": (rastrigin_eval_grad, 5.12),
}


class BenchmarkModel(LossModel):
    """LossModel facade over an analytic objective. The batch argument is
    accepted and ignored so benchmarks run through the same training loop
    as the neural models."""

    def __init__(self, name: str, dim: int):
        if name not in _BENCHMARKS:
            raise ArgumentError(f"unknown benchmark {name!r}, have {sorted(_BENCHMARKS)}")
        if dim < 1 or (name == "rosenbrock" and dim < 2):
            raise ArgumentError(f"dimension {dim} too small for {name}")
        self.name = name
        self.dim = dim
        self._fn, self._span = _BENCHMARKS[name]

    def init_params(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.uniform(-self._span, self._span, size=self.dim)

    def value_and_gradient(self, params, batch=None, train=False, rng=None):
        self._check_params(params)
        return self._fn(params)


def benchmark_model(name: str, dim: int) -> BenchmarkModel:
    return BenchmarkModel(name, dim)


class DiagonalQuadratic(LossModel):
    """sum of lambda_i x_i^2 with known curvatures; gradient descent with a
    step below 1/max(lambda) contracts every coordinate."""

    def __init__(self, lambdas):
        self.lambdas = np.asarray(lambdas, dtype=float)
        if self.lambdas.ndim != 1 or np.any(self.lambdas <= 0):
            raise ArgumentError("lambdas must be a vector of positive curvatures")
        self.dim = self.lambdas.shape[0]

    @property
    def lambda_max(self) -> float:
        return float(self.lambdas.max())

    def init_params(self, seed: int) -> np.ndarray:
        return np.random.default_rng(seed).uniform(-5.0, 5.0, size=self.dim)

    def value_and_gradient(self, params, batch=None, train=False, rng=None):
        self._check_params(params)
        return float(self.lambdas @ (params ** 2)), 2.0 * self.lambdas * params

"""Core swarm domain types and bookkeeping operations.

Everything here is a pure function over value types: pairwise weights,
brute-force nearest-neighbor selection, and the personal/neighborhood
best-position updates. The update rules themselves live in
:mod:`swarmgrad.dynamics`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError

__all__ = [
    "Dynamic",
    "RMode",
    "Dynamic2Form",
    "ParticleState",
    "DynamicsConfig",
    "SnapshotEntry",
    "NeighborSnapshot",
    "pair_weight",
    "nearest_neighbors",
    "update_personal_best",
    "update_neighborhood_best",
    "gradient_weight_matrix",
]


class Dynamic(enum.Enum):
    """Which position-update rule a swarm runs."""

    DYNAMIC1 = "dynamic1"
    DYNAMIC2 = "dynamic2"
    INDIVIDUAL_GD = "individual"


class RMode(enum.Enum):
    """How the uniform draws enter the update: one scalar per term, or one
    draw per coordinate."""

    SCALAR = "scalar"
    PER_DIMENSION = "per-dimension"


class Dynamic2Form(enum.Enum):
    """Dynamic 2 neighbor mixing: the literal published sum, or the
    row-normalized consensus form (default; the literal form diverges for
    any nonzero weights because it adds absolute neighbor positions)."""

    LITERAL = "literal"
    NORMALIZED = "normalized"


@dataclass
class ParticleState:
    """Full state of one particle between epochs.

    ``position`` is the flattened weight vector of the model the particle
    trains. ``velocity`` is the last applied displacement (all-zeros at
    epoch 0). ``personal_best``/``nbhd_best`` carry the lowest-loss points
    seen by the particle alone and by its neighborhood respectively.
    """

    id: int
    position: np.ndarray
    velocity: np.ndarray
    personal_best: np.ndarray
    personal_best_loss: float
    nbhd_best: np.ndarray
    nbhd_best_loss: float
    learning_rate: float
    epoch: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        dims = {
            self.position.shape,
            self.velocity.shape,
            self.personal_best.shape,
            self.nbhd_best.shape,
        }
        if len(dims) != 1 or len(self.position.shape) != 1:
            raise ArgumentError(f"particle {self.id}: inconsistent vector shapes {dims}")
        if self.learning_rate <= 0:
            raise ArgumentError("learning_rate must be positive")

    @property
    def dim(self) -> int:
        return self.position.shape[0]


@dataclass
class DynamicsConfig:
    """Constants steering the update rules.

    ``gradient_weights`` is the pairwise constant matrix (diagonal unused),
    ``beta`` the decay exponent of the pair weight, ``k`` the neighbor count
    (the neighborhood then has k+1 members including the particle itself).
    ``warmup_epochs`` epochs run plain gradient descent before the selected
    dynamic takes over.
    """

    c1: float = 0.5
    c2: float = 0.5
    c: float = 0.5
    beta: float = 1.0
    gradient_weights: np.ndarray = field(default_factory=lambda: gradient_weight_matrix(4))
    k: int = 3
    dynamic: Dynamic = Dynamic.DYNAMIC1
    warmup_epochs: int = 1
    r_mode: RMode = RMode.SCALAR
    d2_form: Dynamic2Form = Dynamic2Form.NORMALIZED
    reset_velocity_each_epoch: bool = False

    def __post_init__(self):
        m = np.asarray(self.gradient_weights, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ArgumentError("gradient_weights must be a square matrix")
        self.gradient_weights = m
        if self.beta <= 0:
            raise ArgumentError("beta must be positive")
        if self.k < 0 or self.k > m.shape[0] - 1:
            raise ArgumentError(f"k={self.k} must satisfy 0 <= k <= N-1 for N={m.shape[0]}")
        if self.warmup_epochs < 0:
            raise ArgumentError("warmup_epochs must be nonnegative")

    @property
    def num_particles(self) -> int:
        return self.gradient_weights.shape[0]


def gradient_weight_matrix(n: int, base: float = 0.2, wild: float = 10.0,
                           wild_particle: int | None = None) -> np.ndarray:
    """Pairwise gradient-weight matrix: ``base`` everywhere off-diagonal,
    with the column of the designated wilder particle (last by default)
    raised to ``wild`` so every other particle weighs its contribution
    more strongly. The diagonal is never read; it is left at zero."""
    if n < 1:
        raise ArgumentError("n must be >= 1")
    if wild_particle is None:
        wild_particle = n - 1
    m = np.full((n, n), base, dtype=float)
    m[:, wild_particle] = wild
    np.fill_diagonal(m, 0.0)
    return m


@dataclass(frozen=True)
class SnapshotEntry:
    """Published per-epoch state of one particle.

    The raw loss gradient is exchanged together with the particle's own
    learning rate, so receivers can form both the gradient step
    ``-lr * gradient`` and the gradient-corrected point
    ``position - lr * gradient``.
    """

    particle_id: int
    position: np.ndarray
    gradient: np.ndarray
    learning_rate: float
    loss: float
    personal_best: np.ndarray
    personal_best_loss: float

    def gradient_step(self) -> np.ndarray:
        """Gradient step this particle took: -lr * grad."""
        return -self.learning_rate * self.gradient

    def gradient_corrected(self) -> np.ndarray:
        """Position pulled back along the particle's own gradient step."""
        return self.position - self.learning_rate * self.gradient


@dataclass(frozen=True)
class NeighborSnapshot:
    """The complete published state of all particles at one epoch.

    Entries are kept sorted by particle id so that any summation over them
    is bitwise reproducible.
    """

    epoch: int
    entries: tuple[SnapshotEntry, ...]

    def __post_init__(self):
        ids = [e.particle_id for e in self.entries]
        if ids != sorted(ids) or len(set(ids)) != len(ids):
            object.__setattr__(
                self, "entries",
                tuple(sorted(self.entries, key=lambda e: e.particle_id)))
            ids = [e.particle_id for e in self.entries]
            if len(set(ids)) != len(ids):
                raise ArgumentError(f"duplicate particle ids in snapshot: {ids}")
        object.__setattr__(self, "_by_id", {e.particle_id: e for e in self.entries})

    def ids(self) -> list[int]:
        return [e.particle_id for e in self.entries]

    def entry(self, particle_id: int) -> SnapshotEntry:
        try:
            return self._by_id[particle_id]
        except KeyError:
            raise ArgumentError(f"no snapshot entry for particle {particle_id}") from None

    def positions(self) -> list[tuple[int, np.ndarray]]:
        return [(e.particle_id, e.position) for e in self.entries]


def pair_weight(z: float, m_pair: float, beta: float) -> float:
    """Decreasing pairwise weight ``m_pair / (1 + z) ** beta``.

    ``z`` is a nonnegative distance-like quantity (plain distance for
    Dynamic 1, squared distance for Dynamic 2). The result lies in
    ``(0, m_pair]`` with the maximum attained at z=0.
    """
    if not (z >= 0):
        raise ArgumentError(f"z must be nonnegative, got {z}")
    if m_pair <= 0:
        raise ArgumentError(f"m_pair must be positive, got {m_pair}")
    if beta <= 0:
        raise ArgumentError(f"beta must be positive, got {beta}")
    return m_pair / (1.0 + z) ** beta


def nearest_neighbors(states: list[tuple[int, np.ndarray]], n: int, k: int) -> set[int]:
    """Ids of the k particles closest (Euclidean) to particle ``n``, plus n.

    Distance ties break toward the smaller id, so the result is unique.
    """
    by_id = dict(states)
    if len(by_id) != len(states):
        raise ArgumentError("duplicate particle ids")
    if n not in by_id:
        raise ArgumentError(f"unknown particle id {n}")
    if not 0 <= k <= len(states) - 1:
        raise ArgumentError(f"k={k} must satisfy 0 <= k <= {len(states) - 1}")
    own = by_id[n]
    ranked = sorted(
        (float(np.linalg.norm(pos - own)), pid)
        for pid, pos in states if pid != n
    )
    return {n} | {pid for _, pid in ranked[:k]}


def update_personal_best(best: np.ndarray, best_loss: float,
                         x: np.ndarray, x_loss: float) -> tuple[np.ndarray, float]:
    """Keep the lower-loss of the incumbent best and the new point.

    Strict inequality: ties keep the earlier best.
    """
    if best.shape != x.shape:
        raise ArgumentError(f"dimension mismatch {best.shape} vs {x.shape}")
    if x_loss < best_loss:
        return x, x_loss
    return best, best_loss


def update_neighborhood_best(best: np.ndarray, best_loss: float,
                             snapshot: NeighborSnapshot,
                             nbhd: set[int]) -> tuple[np.ndarray, float]:
    """Argmin-loss point among the incumbent and the neighborhood's current
    positions. Ties keep the incumbent, then the lowest particle id."""
    if not nbhd:
        raise ArgumentError("neighborhood must not be empty")
    missing = nbhd - set(snapshot.ids())
    if missing:
        raise ArgumentError(f"neighborhood ids missing from snapshot: {sorted(missing)}")
    for pid in sorted(nbhd):
        entry = snapshot.entry(pid)
        if entry.loss < best_loss:
            best, best_loss = entry.position, entry.loss
    return best, best_loss

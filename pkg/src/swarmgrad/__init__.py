"""swarmgrad: collaborative swarm-gradient training.

A population of particle workers trains differentiable models by gradient
descent and exchanges positions, gradients, and best-visited points through
a barrier-synchronized coordinator, mixing the exchanged state into each
particle's update.
"""

__version__ = "0.1.0"

from .core import (
    Dynamic,
    Dynamic2Form,
    DynamicsConfig,
    NeighborSnapshot,
    ParticleState,
    RMode,
    SnapshotEntry,
    gradient_weight_matrix,
    nearest_neighbors,
    pair_weight,
    update_neighborhood_best,
    update_personal_best,
)
from .dynamics import (
    StepInput,
    StepOutput,
    dynamic1_step,
    dynamic2_step,
    individual_gd_step,
    step_for,
)
from .errors import ArgumentError, ConfigError, ProtocolError, SwarmError

__all__ = [
    "ArgumentError", "ConfigError", "Dynamic", "Dynamic2Form",
    "DynamicsConfig", "NeighborSnapshot", "ParticleState", "ProtocolError",
    "RMode", "SnapshotEntry", "StepInput", "StepOutput", "SwarmError",
    "__version__", "dynamic1_step", "dynamic2_step", "gradient_weight_matrix",
    "individual_gd_step", "nearest_neighbors", "pair_weight", "step_for",
    "update_neighborhood_best", "update_personal_best",
]

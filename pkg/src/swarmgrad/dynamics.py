"""Position-update rules.

Three rules move a particle once per epoch after the snapshot exchange:

* ``dynamic1_step`` mixes the neighborhood's gradient steps (weighted by a
  decreasing function of pairwise distance) with cognitive and social
  attraction toward the personal and neighborhood bests.
* ``dynamic2_step`` pulls the particle toward gradient-corrected neighbor
  positions plus a neighborhood-best attraction. The normalized consensus
  form is the default; the literal form (which adds absolute neighbor
  positions and therefore diverges for any nonzero weight) is kept for
  fidelity experiments.
* ``individual_gd_step`` is the no-collaboration baseline, and is exactly
  what ``dynamic1_step`` degenerates to with c1 = c2 = 0 and a self-only
  neighborhood.

All rules are pure: they read an immutable snapshot and return fresh arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Dynamic,
    Dynamic2Form,
    DynamicsConfig,
    NeighborSnapshot,
    ParticleState,
    RMode,
    pair_weight,
)
from .errors import ArgumentError, ProtocolError

__all__ = ["StepInput", "StepOutput", "dynamic1_step", "dynamic2_step",
           "individual_gd_step", "step_for"]


@dataclass
class StepInput:
    """Everything one update step may read.

    ``loss_gradient`` is the full-batch gradient at the particle's current
    position; ``neighborhood`` the resolved neighbor ids (always containing
    the particle itself); ``rng`` supplies the uniform draws, one scalar or
    one vector per term depending on ``config.r_mode``.
    """

    self_state: ParticleState
    snapshot: NeighborSnapshot
    config: DynamicsConfig
    loss_gradient: np.ndarray
    neighborhood: set[int]
    rng: np.random.Generator

    def __post_init__(self):
        if self.loss_gradient.shape != self.self_state.position.shape:
            raise ArgumentError(
                f"gradient dimension {self.loss_gradient.shape} does not match "
                f"position dimension {self.self_state.position.shape}")
        if self.snapshot.epoch != self.self_state.epoch:
            raise ArgumentError(
                f"snapshot epoch {self.snapshot.epoch} != particle epoch {self.self_state.epoch}")

    def draw(self) -> float | np.ndarray:
        if self.config.r_mode is RMode.PER_DIMENSION:
            return self.rng.uniform(0.0, 1.0, size=self.self_state.dim)
        return float(self.rng.uniform(0.0, 1.0))


@dataclass
class StepOutput:
    new_position: np.ndarray
    new_velocity: np.ndarray
    gradient_step: np.ndarray        # the particle's own -lr * grad
    intermediate_position: np.ndarray  # where that step alone would land


def _neighbor_entry(inp: StepInput, pid: int):
    try:
        return inp.snapshot.entry(pid)
    except ArgumentError as exc:
        raise ProtocolError(str(exc)) from exc


def dynamic1_step(inp: StepInput) -> StepOutput:
    """Gradient-push update.

    step = -lr * grad; trial = x + step;
    v' = sum over neighborhood of w * neighbor_step
         + c1 r1 (best - trial) + c2 r2 (nbhd_best - trial);
    x' = x + v'.

    The self weight is fixed at 1 so the particle always applies its own
    gradient step at full strength; neighbor weights decay with distance via
    ``pair_weight``. r1 and r2 are independent uniform draws.
    """
    st, cfg = inp.self_state, inp.config
    x = st.position
    step = -st.learning_rate * inp.loss_gradient
    trial = x + step

    mixed = np.zeros_like(x)
    m = cfg.gradient_weights
    for pid in sorted(inp.neighborhood):
        if pid == st.id:
            mixed = mixed + step
            continue
        entry = _neighbor_entry(inp, pid)
        dist = float(np.linalg.norm(x - entry.position))
        w = pair_weight(dist, m[st.id, pid], cfg.beta)
        mixed = mixed + w * entry.gradient_step()

    r1, r2 = inp.draw(), inp.draw()
    v_new = (mixed
             + cfg.c1 * r1 * (st.personal_best - trial)
             + cfg.c2 * r2 * (st.nbhd_best - trial))
    return StepOutput(new_position=x + v_new, new_velocity=v_new,
                      gradient_step=step, intermediate_position=trial)


def dynamic2_step(inp: StepInput) -> StepOutput:
    """Pull-back update toward gradient-corrected neighbor positions.

    Neighbor weights use the squared distance,
    w = pair_weight(||x - x_j||^2), and each neighbor's gradient is scaled
    by that neighbor's own learning
    rate. The self term is excluded from the sum. In the normalized form the
    weights are divided by (1 + sum of weights) and the particle's own
    position leaves the sum, so the neighbor contribution becomes a bounded
    displacement toward a consensus point; the literal form applies the
    published equation verbatim.
    """
    st, cfg = inp.self_state, inp.config
    x = st.position
    step = -st.learning_rate * inp.loss_gradient
    trial = x + step

    neighbor_ids = [pid for pid in sorted(inp.neighborhood) if pid != st.id]
    weights = []
    targets = []
    for pid in neighbor_ids:
        entry = _neighbor_entry(inp, pid)
        diff = x - entry.position
        z = float(diff @ diff)
        weights.append(pair_weight(z, cfg.gradient_weights[st.id, pid], cfg.beta))
        targets.append(entry.gradient_corrected())

    disp = np.zeros_like(x)
    if weights:
        if cfg.d2_form is Dynamic2Form.NORMALIZED:
            denom = 1.0 + sum(weights)
            for w, y in zip(weights, targets):
                disp = disp + (w / denom) * y
            disp = disp - x * (sum(weights) / denom)
        else:
            for w, y in zip(weights, targets):
                disp = disp + w * y

    r = inp.draw()
    v_new = disp + cfg.c * r * (st.nbhd_best - x)
    return StepOutput(new_position=x + v_new, new_velocity=v_new,
                      gradient_step=step, intermediate_position=trial)


def individual_gd_step(inp: StepInput) -> StepOutput:
    """Plain gradient descent: x' = x - lr * grad, ignoring all neighbors."""
    st = inp.self_state
    step = -st.learning_rate * inp.loss_gradient
    trial = st.position + step
    return StepOutput(new_position=trial, new_velocity=step,
                      gradient_step=step, intermediate_position=trial)


_STEP_FNS = {
    Dynamic.DYNAMIC1: dynamic1_step,
    Dynamic.DYNAMIC2: dynamic2_step,
    Dynamic.INDIVIDUAL_GD: individual_gd_step,
}


def step_for(config: DynamicsConfig, epoch: int):
    """Step function for the given epoch, honoring the warmup phase during
    which every dynamic runs individual gradient descent."""
    if epoch < config.warmup_epochs:
        return individual_gd_step
    return _STEP_FNS[config.dynamic]

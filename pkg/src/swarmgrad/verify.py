"""Self-verification suites behind the ``verify`` CLI command.

Three suites, each a list of named checks with machine-readable pass/fail
results: ``gradients`` (analytic vs central finite-difference gradients for
every micro-model), ``dynamics`` (degeneracy, determinism, fixed points,
draw statistics, descent sanity), ``protocol`` (barrier bookkeeping,
in-process vs networked equality, fault injection).
"""

from __future__ import annotations

import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Dynamic, Dynamic2Form, DynamicsConfig, NeighborSnapshot, \
    ParticleState, SnapshotEntry, gradient_weight_matrix
from .coordinator import CoordinatorServer, replay_losses
from .dynamics import StepInput, dynamic2_step
from .errors import ProtocolError
from .models import (
    ConvClassifier,
    ImageBatch,
    MLPClassifier,
    SequenceBatch,
    SequenceClassifier,
    SequenceModelConfig,
    benchmark_model,
    finite_diff_gradient,
)
from .models.benchmarks import DiagonalQuadratic
from .worker import CoordinatorClient, InProcessExchange, run_particle, \
    run_swarm_inprocess

__all__ = ["CheckResult", "GRADIENT_TOLERANCE", "gradient_check_models",
           "verify_gradients", "verify_dynamics", "verify_protocol",
           "run_suite", "SUITES"]

GRADIENT_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} {self.detail}"


def _max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric)
                        / np.maximum(1.0, np.abs(numeric))))


def gradient_check_models() -> dict[str, tuple]:
    """The micro-model zoo: name -> (model, batch_factory(rng))."""
    def seq_batch(rng, batch=3, time_steps=4, feat=4, classes=3):
        return SequenceBatch(rng.normal(size=(batch, time_steps, feat)),
                             rng.integers(0, classes, batch), classes)

    def img_batch(rng):
        return ImageBatch(rng.normal(size=(3, 6, 6, 2)),
                          rng.integers(0, 3, 3), 3)

    seq_dims = dict(input_dim=4, seq_len=4, num_classes=3, hidden_units=6,
                    head_dim=6, noise_sigma=0.0, dropout_rate=0.0)
    zoo: dict[str, tuple] = {
        "mlp_projector": (MLPClassifier(4, 4, 3, hidden=12), seq_batch),
        "transformer_n2_d16_h2": (SequenceClassifier(SequenceModelConfig(
            arch="transformer", d_model=16, num_blocks=2, num_heads=2,
            ffn_dim=8, **seq_dims)), seq_batch),
        "rnn": (SequenceClassifier(SequenceModelConfig(
            arch="rnn", d_model=6, **seq_dims)), seq_batch),
        "lstm": (SequenceClassifier(SequenceModelConfig(
            arch="lstm", d_model=6, **seq_dims)), seq_batch),
        "gru": (SequenceClassifier(SequenceModelConfig(
            arch="gru", d_model=6, **seq_dims)), seq_batch),
        "bilstm": (SequenceClassifier(SequenceModelConfig(
            arch="bilstm", d_model=6, **seq_dims)), seq_batch),
        "conv_pool_net": (ConvClassifier(6, 6, 2, 3, kernel=3, filters=3,
                                         pool=2), img_batch),
    }
    return zoo


def verify_gradients(draws: int = 10, seed: int = 2024) -> list[CheckResult]:
    """Analytic gradient vs central differences for every micro-model."""
    results = []
    start = time.monotonic()
    for name, (model, batch_factory) in gradient_check_models().items():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for d in range(draws):
            params = model.init_params(seed + 31 * d) \
                + 0.05 * rng.normal(size=model.dim)
            batch = batch_factory(rng)
            analytic = model.gradient(params, batch)
            numeric = finite_diff_gradient(model, params, batch)
            worst = max(worst, _max_rel_err(analytic, numeric))
        results.append(CheckResult(
            f"gradients.{name}", worst < GRADIENT_TOLERANCE,
            f"max_rel_err={worst:.3e} over {draws} draws (tol {GRADIENT_TOLERANCE:g})"))
    results.append(CheckResult(
        "gradients.runtime", time.monotonic() - start < 120.0,
        f"{time.monotonic() - start:.1f}s (budget 120s)"))
    return results


def _sphere_pair(epochs: int = 50, dim: int = 100, seed: int = 11):
    common = dict(epochs=epochs, batch_size=1, learning_rates=0.01,
                  base_seed=seed, num_particles=1)
    ind = run_swarm_inprocess(
        lambda: benchmark_model("sphere", dim), None,
        DynamicsConfig(dynamic=Dynamic.INDIVIDUAL_GD,
                       gradient_weights=gradient_weight_matrix(1), k=0,
                       warmup_epochs=0), **common)[0]
    d1 = run_swarm_inprocess(
        lambda: benchmark_model("sphere", dim), None,
        DynamicsConfig(c1=0.0, c2=0.0, dynamic=Dynamic.DYNAMIC1,
                       gradient_weights=gradient_weight_matrix(1), k=0,
                       warmup_epochs=0), **common)[0]
    return ind, d1


def verify_dynamics() -> list[CheckResult]:
    results = []

    ind, d1 = _sphere_pair()
    bitwise = np.array_equal(ind.final_position, d1.final_position)
    same_losses = [r["loss"] for r in ind.trajectory] == [r["loss"] for r in d1.trajectory]
    results.append(CheckResult(
        "dynamics.sgd_degeneracy", bitwise and same_losses,
        "dynamic1(c1=c2=0, self-only) == plain gradient descent, bitwise, 50 epochs"))

    cfg = DynamicsConfig(dynamic=Dynamic.DYNAMIC1, warmup_epochs=1)
    runs = [run_swarm_inprocess(lambda: benchmark_model("rastrigin", 10), None,
                                cfg, epochs=10, batch_size=1,
                                learning_rates=[1e-2, 1e-3, 1e-4, 3e-3],
                                base_seed=5) for _ in range(2)]
    det = all(np.array_equal(a.final_position, b.final_position)
              for a, b in zip(*runs))
    results.append(CheckResult(
        "dynamics.determinism", det,
        "identical seeds give bitwise-identical trajectories"))

    # Fixed point of the pull-back rule at a common stationary point.
    x_star = np.zeros(6)
    entries = tuple(SnapshotEntry(i, x_star, np.zeros(6), 0.01, 0.0,
                                  x_star, 0.0) for i in range(4))
    snap = NeighborSnapshot(epoch=0, entries=entries)
    fixed = True
    for form in (Dynamic2Form.NORMALIZED, Dynamic2Form.LITERAL):
        cfg2 = DynamicsConfig(dynamic=Dynamic.DYNAMIC2, d2_form=form,
                              warmup_epochs=0)
        st = ParticleState(id=0, position=x_star, velocity=np.zeros(6),
                           personal_best=x_star, personal_best_loss=0.0,
                           nbhd_best=x_star, nbhd_best_loss=0.0,
                           learning_rate=0.01)
        out = dynamic2_step(StepInput(st, snap, cfg2, np.zeros(6),
                                      {0, 1, 2, 3}, np.random.default_rng(0)))
        fixed = fixed and np.allclose(out.new_position, x_star, atol=0.0)
    results.append(CheckResult(
        "dynamics.pullback_fixed_point", fixed,
        "stationary consensus point is unchanged in both forms"))

    rng = np.random.default_rng(99)
    draws = rng.uniform(0.0, 1.0, size=100_000)
    mean_ok = abs(float(draws.mean()) - 0.5) < 0.01
    results.append(CheckResult(
        "dynamics.uniform_draws", mean_ok,
        f"mean of 1e5 draws = {draws.mean():.4f} (within 0.01 of 0.5)"))

    quad = DiagonalQuadratic([0.5, 1.0, 4.0, 10.0])
    eta = 0.9 / quad.lambda_max
    x = quad.init_params(3)
    losses = [quad.evaluate(x, None)]
    for _ in range(25):
        x = x - eta * quad.gradient(x, None)
        losses.append(quad.evaluate(x, None))
    descent = all(b <= a for a, b in zip(losses, losses[1:]))
    results.append(CheckResult(
        "dynamics.quadratic_descent", descent,
        f"loss non-increasing for eta=0.9/lambda_max over 25 steps "
        f"(final {losses[-1]:.2e})"))
    return results


def verify_protocol() -> list[CheckResult]:
    results = []
    tmp = Path(tempfile.mkdtemp(prefix="swarmgrad-verify-"))

    # In-process vs networked equality on a small run.
    cfg = DynamicsConfig(dynamic=Dynamic.DYNAMIC1, warmup_epochs=1)
    lrs = [1e-2, 1e-3, 1e-4, 3e-3]
    inproc = run_swarm_inprocess(lambda: benchmark_model("sphere", 10), None,
                                 cfg, epochs=5, batch_size=1,
                                 learning_rates=lrs, base_seed=21)
    log_path = tmp / "net.jsonl"
    server = CoordinatorServer("127.0.0.1", 0, 4, "verify-net", log_path,
                               barrier_timeout=60)
    server.start()
    host, port = server.address
    net_results: list = [None] * 4
    model = benchmark_model("sphere", 10)

    def net_worker(i):
        client = CoordinatorClient(host, port)
        try:
            net_results[i] = run_particle(
                model, None, cfg, client, 5, 1, lambda pid: lrs[pid], 21,
                run_id="verify-net", expected_particles=4, barrier_timeout=60)
        finally:
            client.close()

    threads = [threading.Thread(target=net_worker, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    server.wait(10)
    server.stop()
    by_id = {r.particle_id: r for r in net_results}
    equal = all(np.array_equal(by_id[p.particle_id].final_position,
                               p.final_position) for p in inproc)
    results.append(CheckResult(
        "protocol.mode_equivalence", equal,
        "networked == in-process final positions, bitwise, 4 particles x 5 epochs"))

    losses = replay_losses(log_path)
    complete = len(losses) == 4 * 5 and not server.failed
    results.append(CheckResult(
        "protocol.log_completeness", complete,
        f"{len(losses)} publish records for 4 particles x 5 epochs"))

    replay_ok = all(abs(losses[(pid, e)] - by_id[pid].trajectory[e + 1]["loss"]) == 0.0
                    for pid in range(4) for e in range(5))
    results.append(CheckResult(
        "protocol.log_replay", replay_ok,
        "replayed per-epoch losses match the trajectories exactly"))

    # Fault injection: one particle dies, everyone else times out.
    exchange = InProcessExchange(3, run_id="verify-fault")
    cfg_f = DynamicsConfig(dynamic=Dynamic.DYNAMIC1, warmup_epochs=0,
                           gradient_weights=gradient_weight_matrix(3), k=2)
    outcomes: list = [None] * 3
    for pid in range(3):
        exchange.register("verify-fault", 3)

    def fault_worker(pid):
        try:
            run_particle(model, None, cfg_f, exchange, 5, 1, 0.01, 77,
                         expected_particles=3, particle_id=pid,
                         barrier_timeout=1.5,
                         fail_at_epoch=2 if pid == 2 else None)
            outcomes[pid] = "completed"
        except ProtocolError as exc:
            outcomes[pid] = f"protocol_error: {exc}"

    threads = [threading.Thread(target=fault_worker, args=(pid,)) for pid in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    survivors_errored = all("protocol_error" in str(outcomes[pid]) for pid in (0, 1))
    no_snapshot = 2 not in exchange.released_epochs()
    results.append(CheckResult(
        "protocol.fault_injection", survivors_errored and no_snapshot,
        "killed particle at epoch 2: survivors got timeout errors, "
        "no epoch-2 snapshot released"))
    return results


SUITES = {
    "gradients": verify_gradients,
    "dynamics": verify_dynamics,
    "protocol": verify_protocol,
}


def run_suite(name: str) -> list[CheckResult]:
    """Run one suite (or 'all'); returns the individual check results."""
    if name == "all":
        out = []
        for fn in SUITES.values():
            out.extend(fn())
        return out
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from "
                         f"{sorted(SUITES)} or 'all'")
    return SUITES[name]()

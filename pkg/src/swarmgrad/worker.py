"""Per-particle training loop and the two exchange backends.

One epoch of a particle's life: minibatch SGD over its dataset, publish
(position, gradient, loss, personal best) to the exchange, block on the
barrier for the full snapshot, resolve the nearest-neighbor set, apply the
configured update rule, then fold the published snapshot into the personal
and neighborhood bests. Warmup epochs replace the update rule with plain
gradient descent.

The exchange is either in-process (N particle threads sharing a condition
variable) or networked (one TCP client per worker process talking to the
coordinator). Both produce identical snapshots for identical seeds.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from dataclasses import dataclass

import numpy as np

from .core import (
    DynamicsConfig,
    NeighborSnapshot,
    ParticleState,
    SnapshotEntry,
    nearest_neighbors,
    update_neighborhood_best,
    update_personal_best,
)
from .coordinator import DEFAULT_BARRIER_TIMEOUT, RunLog, position_digest
from .dynamics import StepInput, step_for
from .errors import ArgumentError, ProtocolError
from .models.base import LossModel
from .protocol import (
    Kind,
    encode_message,
    entry_to_payload,
    payload_to_snapshot,
    recv_message,
    send_message,
)

__all__ = ["EpochResult", "train_epoch", "ParticleResult", "run_particle",
           "InProcessExchange", "CoordinatorClient", "run_swarm_inprocess",
           "particle_rngs"]


@dataclass
class EpochResult:
    params: np.ndarray
    epoch_loss: float       # mean of the minibatch training losses
    full_loss: float        # deterministic loss at the final params
    gradient: np.ndarray    # gradient exchanged with the swarm


def train_epoch(model: LossModel, params: np.ndarray, data, batch_size: int,
                learning_rate: float, rng: np.random.Generator,
                noise_rng: np.random.Generator | None = None,
                exchange_gradient: str = "full_batch") -> EpochResult:
    """One epoch of minibatch SGD in a seeded shuffle order.

    ``data=None`` runs a single full-objective step (benchmark models ignore
    batches). The exchanged gradient is the full-batch gradient at the final
    params by default, or the last minibatch's gradient when
    ``exchange_gradient="last_minibatch"``.
    """
    if exchange_gradient not in ("full_batch", "last_minibatch"):
        raise ArgumentError(f"unknown exchange_gradient {exchange_gradient!r}")
    params = np.asarray(params, dtype=float)
    if data is None:
        loss, grad = model.value_and_gradient(params, None, train=True, rng=noise_rng)
        new_params = params - learning_rate * grad
        if exchange_gradient == "last_minibatch":
            return EpochResult(new_params, loss, loss, grad)
        full_loss, full_grad = model.value_and_gradient(new_params, None)
        return EpochResult(new_params, loss, full_loss, full_grad)

    m = len(data)
    if batch_size < 1 or batch_size > m:
        raise ArgumentError(f"batch_size {batch_size} must lie in [1, {m}]")
    order = rng.permutation(m)
    losses = []
    last_grad = None
    for start in range(0, m, batch_size):
        # The shuffle chooses batch membership; sorting within the batch keeps
        # summation order canonical (and the batch_size == m case bitwise
        # identical to a full-batch step).
        batch = data.take(np.sort(order[start:start + batch_size]))
        loss, grad = model.value_and_gradient(params, batch, train=True, rng=noise_rng)
        params = params - learning_rate * grad
        losses.append(loss)
        last_grad = grad
    epoch_loss = float(np.mean(losses))
    if exchange_gradient == "last_minibatch":
        full_loss = model.evaluate(params, data)
        return EpochResult(params, epoch_loss, full_loss, last_grad)
    full_loss, full_grad = model.value_and_gradient(params, data)
    return EpochResult(params, epoch_loss, full_loss, full_grad)


def particle_rngs(base_seed: int, particle_id: int):
    """Independent streams per particle: (init_seed, shuffle, dynamics, noise)."""
    root = np.random.SeedSequence(base_seed + particle_id)
    s_init, s_shuffle, s_dyn, s_noise = root.spawn(4)
    init_seed = int(s_init.generate_state(1)[0])
    return (init_seed, np.random.default_rng(s_shuffle),
            np.random.default_rng(s_dyn), np.random.default_rng(s_noise))


@dataclass
class ParticleResult:
    particle_id: int
    trajectory: list[dict]
    final_position: np.ndarray
    final_loss: float
    best_position: np.ndarray
    best_loss: float
    nbhd_best_loss: float


def run_particle(model: LossModel, data, dynamics: DynamicsConfig, exchange,
                 epochs: int, batch_size: int, learning_rate,
                 base_seed: int, run_id: str = "run",
                 expected_particles: int | None = None,
                 particle_id: int | None = None,
                 log_path=None, eval_fn=None,
                 barrier_timeout: float = DEFAULT_BARRIER_TIMEOUT,
                 exchange_gradient: str = "full_batch",
                 fail_at_epoch: int | None = None) -> ParticleResult:
    """Run one particle for ``epochs`` epochs against an exchange.

    ``learning_rate`` may be a float or a callable mapping the assigned
    particle id to a float (ids are only known after registration in
    networked mode). ``eval_fn(params) -> dict`` merges extra metrics into
    each trajectory record. ``fail_at_epoch`` is a fault-injection hook: the
    worker raises just before publishing that epoch.

    Protocol errors abort the run with a diagnostic trajectory record and
    propagate to the caller.
    """
    if expected_particles is None:
        expected_particles = dynamics.num_particles
    if particle_id is None:
        particle_id = exchange.register(run_id, expected_particles)
    lr = learning_rate(particle_id) if callable(learning_rate) else float(learning_rate)

    init_seed, shuffle_rng, dyn_rng, noise_rng = particle_rngs(base_seed, particle_id)
    params = model.init_params(init_seed)
    init_loss = model.evaluate(params, data)
    best, best_loss = params, init_loss
    nbhd_best, nbhd_best_loss = params, init_loss
    velocity = np.zeros_like(params)

    trajectory: list[dict] = []
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None

    def emit(record: dict):
        trajectory.append(record)
        if log_fh:
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            log_fh.flush()

    emit({"event": "init", "run_id": run_id, "particle_id": particle_id,
          "epoch": -1, "loss": init_loss, "best_loss": best_loss,
          "position_l2": float(np.linalg.norm(params)),
          "learning_rate": lr, "dynamic": dynamics.dynamic.value})

    try:
        for epoch in range(epochs):
            t0 = time.monotonic()
            result = train_epoch(model, params, data, batch_size, lr,
                                 shuffle_rng, noise_rng, exchange_gradient)
            params = result.params
            if fail_at_epoch is not None and epoch == fail_at_epoch:
                raise ProtocolError(
                    f"fault injection: particle {particle_id} dies at epoch {epoch}")

            entry = SnapshotEntry(
                particle_id=particle_id, position=params, gradient=result.gradient,
                learning_rate=lr, loss=result.full_loss,
                personal_best=best, personal_best_loss=best_loss)
            exchange.publish(particle_id, epoch, entry)
            snapshot = exchange.await_snapshot(particle_id, epoch, barrier_timeout)

            k_eff = min(dynamics.k, len(snapshot.entries) - 1)
            nbhd = nearest_neighbors(snapshot.positions(), particle_id, k_eff)
            state = ParticleState(
                id=particle_id, position=params, velocity=velocity,
                personal_best=best, personal_best_loss=best_loss,
                nbhd_best=nbhd_best, nbhd_best_loss=nbhd_best_loss,
                learning_rate=lr, epoch=epoch, rng_seed=base_seed + particle_id)
            step = step_for(dynamics, epoch)
            out = step(StepInput(self_state=state, snapshot=snapshot,
                                 config=dynamics, loss_gradient=result.gradient,
                                 neighborhood=nbhd, rng=dyn_rng))

            best, best_loss = update_personal_best(best, best_loss, params,
                                                   result.full_loss)
            nbhd_best, nbhd_best_loss = update_neighborhood_best(
                nbhd_best, nbhd_best_loss, snapshot, nbhd)

            velocity = (np.zeros_like(params)
                        if dynamics.reset_velocity_each_epoch else out.new_velocity)
            record = {"event": "epoch", "run_id": run_id, "particle_id": particle_id,
                      "epoch": epoch, "epoch_loss": result.epoch_loss,
                      "loss": result.full_loss, "best_loss": best_loss,
                      "nbhd_best_loss": nbhd_best_loss,
                      "position_l2": float(np.linalg.norm(params)),
                      "wall_time": time.monotonic() - t0}
            if eval_fn is not None:
                record.update(eval_fn(params))
            emit(record)
            params = out.new_position
        exchange.complete(particle_id)
    except ProtocolError as exc:
        emit({"event": "abort", "run_id": run_id, "particle_id": particle_id,
              "error": str(exc)})
        raise
    finally:
        if log_fh:
            log_fh.close()

    return ParticleResult(
        particle_id=particle_id, trajectory=trajectory,
        final_position=params,
        final_loss=trajectory[-1]["loss"] if len(trajectory) > 1 else init_loss,
        best_position=best, best_loss=best_loss,
        nbhd_best_loss=nbhd_best_loss)


# ---------------------------------------------------------------------------
# exchanges

class InProcessExchange:
    """Barrier exchange for particle threads in one process.

    Same validation and write-ahead behavior as the coordinator, minus the
    sockets; snapshots carry the exact float64 arrays that were published.
    """

    def __init__(self, expected_particles: int, run_id: str = "local",
                 log: RunLog | None = None):
        self.expected = expected_particles
        self.run_id = run_id
        self.log = log
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._registered = 0
        self._started = False
        self._next_epoch: dict[int, int] = {}
        self._pending: dict[int, dict[int, SnapshotEntry]] = {}
        self._snapshots: dict[int, NeighborSnapshot] = {}
        self._failed = False
        self._fail_reason = ""

    def register(self, run_id: str, expected_particles: int) -> int:
        with self._lock:
            if self._started:
                raise ProtocolError("run already started")
            if expected_particles != self.expected:
                raise ProtocolError(
                    f"exchange expects {self.expected} particles, not {expected_particles}")
            pid = self._registered
            self._registered += 1
            self._next_epoch[pid] = 0
            if self._registered == self.expected:
                self._started = True
            if self.log:
                self.log.append("register", self.run_id, particle_id=pid)
            return pid

    def _fail(self, reason: str):
        if not self._failed:
            self._failed = True
            self._fail_reason = reason
            if self.log:
                self.log.append("run_failed", self.run_id, reason=reason)
            self._cond.notify_all()

    def fail(self, reason: str) -> None:
        """Mark the run failed and release every waiter with an error."""
        with self._lock:
            self._fail(reason)

    def publish(self, particle_id: int, epoch: int, entry: SnapshotEntry) -> None:
        with self._lock:
            if self._failed:
                raise ProtocolError(f"run failed: {self._fail_reason}")
            if particle_id not in self._next_epoch:
                raise ProtocolError(f"particle {particle_id} is not registered")
            expected = self._next_epoch[particle_id]
            if epoch != expected:
                raise ProtocolError(
                    f"duplicate publish for epoch {epoch}" if epoch < expected
                    else f"wrong epoch {epoch}, expected {expected}")
            if self.log:
                self.log.append("publish", self.run_id, epoch=epoch,
                                particle_id=particle_id, loss=entry.loss,
                                digest=position_digest(entry.position))
            self._pending.setdefault(epoch, {})[particle_id] = entry
            self._next_epoch[particle_id] = epoch + 1
            if len(self._pending[epoch]) == self.expected:
                published = self._pending.pop(epoch)
                entries = tuple(published[pid] for pid in sorted(published))
                self._snapshots[epoch] = NeighborSnapshot(epoch=epoch, entries=entries)
                if self.log:
                    self.log.append("snapshot_release", self.run_id, epoch=epoch)
                self._cond.notify_all()

    def await_snapshot(self, particle_id: int, epoch: int,
                       timeout: float = DEFAULT_BARRIER_TIMEOUT) -> NeighborSnapshot:
        deadline = time.monotonic() + timeout
        with self._lock:
            while epoch not in self._snapshots and not self._failed:
                remaining = deadline - time.monotonic()
                if remaining <= 0 or not self._cond.wait(timeout=remaining):
                    self._fail(f"barrier timeout at epoch {epoch}: "
                               f"{len(self._pending.get(epoch, {}))}/{self.expected} published")
                    break
            if self._failed:
                raise ProtocolError(f"run failed: {self._fail_reason}")
            return self._snapshots[epoch]

    def complete(self, particle_id: int) -> None:
        if self.log:
            self.log.append("complete", self.run_id, particle_id=particle_id)

    def released_epochs(self) -> set[int]:
        with self._lock:
            return set(self._snapshots)


class CoordinatorClient:
    """Networked exchange: one persistent connection to the coordinator."""

    def __init__(self, host: str, port: int, connect_timeout: float = 30.0):
        self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        self.run_id = ""

    def close(self):
        self._sock.close()

    def _request(self, data: bytes, read_timeout: float | None):
        self._sock.settimeout(read_timeout)
        send_message(self._sock, data)
        return recv_message(self._sock)

    @staticmethod
    def _expect(msg, kind: Kind):
        if msg.kind is Kind.ERROR:
            raise ProtocolError(msg.payload.get("reason", "coordinator error"))
        if msg.kind is not kind:
            raise ProtocolError(f"expected {kind.value}, got {msg.kind.value}")
        return msg

    def register(self, run_id: str, expected_particles: int) -> int:
        self.run_id = run_id
        msg = self._request(encode_message(
            Kind.REGISTER, run_id, -1, -1,
            {"expected_particles": expected_particles}), read_timeout=60.0)
        return self._expect(msg, Kind.REGISTER_ACK).particle_id

    def publish(self, particle_id: int, epoch: int, entry: SnapshotEntry) -> None:
        msg = self._request(encode_message(
            Kind.PUBLISH_STATE, self.run_id, particle_id, epoch,
            entry_to_payload(entry)), read_timeout=60.0)
        self._expect(msg, Kind.SNAPSHOT_READY)

    def await_snapshot(self, particle_id: int, epoch: int,
                       timeout: float = DEFAULT_BARRIER_TIMEOUT) -> NeighborSnapshot:
        # The coordinator enforces the barrier timeout; pad the socket read
        # so its verdict (snapshot or error) arrives first.
        self._sock.settimeout(timeout + 30.0)
        msg = self._expect(recv_message(self._sock), Kind.SNAPSHOT_REPLY)
        if msg.epoch != epoch:
            raise ProtocolError(f"snapshot for epoch {msg.epoch}, expected {epoch}")
        return payload_to_snapshot(msg.payload)

    def complete(self, particle_id: int) -> None:
        msg = self._request(encode_message(
            Kind.RUN_COMPLETE, self.run_id, particle_id, -1), read_timeout=60.0)
        self._expect(msg, Kind.RUN_COMPLETE)


# ---------------------------------------------------------------------------
# in-process swarm

def run_swarm_inprocess(model_factory, data, dynamics: DynamicsConfig,
                        epochs: int, batch_size: int, learning_rates,
                        base_seed: int, run_id: str = "local",
                        num_particles: int | None = None,
                        log_dir=None, run_log: RunLog | None = None,
                        eval_fn=None,
                        barrier_timeout: float = DEFAULT_BARRIER_TIMEOUT,
                        exchange_gradient: str = "full_batch") -> list[ParticleResult]:
    """Run N particles as threads over an in-process exchange.

    ``model_factory()`` builds the shared (immutable) loss model;
    ``learning_rates`` is a float, a list of per-particle floats, or a
    callable of the particle id. Returns per-particle results sorted by id.
    """
    n = num_particles if num_particles is not None else dynamics.num_particles
    exchange = InProcessExchange(n, run_id=run_id, log=run_log)
    model = model_factory()

    if callable(learning_rates):
        lr_fn = learning_rates
    elif isinstance(learning_rates, (list, tuple, np.ndarray)):
        rates = [float(r) for r in learning_rates]
        if len(rates) != n:
            raise ArgumentError(f"need {n} learning rates, got {len(rates)}")
        lr_fn = lambda pid: rates[pid]
    else:
        lr_fn = lambda pid, _r=float(learning_rates): _r

    results: list[ParticleResult | None] = [None] * n
    errors: list[BaseException | None] = [None] * n

    def work(pid: int):
        try:
            log_path = None
            if log_dir is not None:
                log_path = f"{log_dir}/trajectory_{run_id}_p{pid}.jsonl"
            results[pid] = run_particle(
                model, data, dynamics, exchange, epochs, batch_size,
                lr_fn, base_seed, run_id=run_id, expected_particles=n,
                particle_id=pid, log_path=log_path, eval_fn=eval_fn,
                barrier_timeout=barrier_timeout,
                exchange_gradient=exchange_gradient)
        except BaseException as exc:  # noqa: BLE001 - reported to the caller
            errors[pid] = exc
            # Release the other particles instead of letting them wait out
            # the full barrier timeout.
            exchange.fail(f"particle {pid} crashed: {exc}")

    # Deterministic id assignment: register in id order up front.
    for pid in range(n):
        assigned = exchange.register(run_id, n)
        assert assigned == pid
    threads = [threading.Thread(target=work, args=(pid,), name=f"particle-{pid}")
               for pid in range(n)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    # The root cause is more useful than the secondary barrier failures.
    root = [e for e in errors if e is not None and not isinstance(e, ProtocolError)]
    for exc in root + [e for e in errors if e is not None]:
        raise exc
    return results  # type: ignore[return-value]

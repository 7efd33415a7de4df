"""Barrier-synchronized state-exchange service.

The coordinator is a pure rendezvous plus storage service: workers register,
publish their per-epoch state, and block until every particle has reported,
at which point all of them receive one byte-identical snapshot. It computes
nothing about the swarm dynamics. Every exchanged record is appended to a
line-delimited JSON run log, flushed before the snapshot is released.

Failure policy is all-or-nothing: if any particle misses the barrier for
longer than the timeout, the run is marked failed and every waiter (and any
later request) receives an error.
"""

from __future__ import annotations

import json
import socket
import threading
import time

import numpy as np

from .errors import ProtocolError
from .protocol import (
    Kind,
    Message,
    encode_message,
    recv_message,
    send_message,
    snapshot_to_payload,
)

__all__ = ["RunLog", "position_digest", "CoordinatorServer", "replay_losses"]

DEFAULT_BARRIER_TIMEOUT = 300.0


def position_digest(position) -> dict:
    """Log-friendly digest of a weight vector: first 8 components + L2 norm."""
    vec = np.asarray(position, dtype=float)
    return {"first8": [float(v) for v in vec[:8]],
            "l2": float(np.linalg.norm(vec))}


class RunLog:
    """Append-only line-delimited JSON log, flushed on every record."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "a", encoding="utf-8")
        self._lock = threading.Lock()

    def append(self, event: str, run_id: str, epoch: int | None = None,
               particle_id: int | None = None, loss: float | None = None,
               digest: dict | None = None, **extra) -> None:
        record = {"ts": time.time(), "event": event, "run_id": run_id,
                  "epoch": epoch, "particle_id": particle_id, "loss": loss,
                  "digest": digest}
        record.update(extra)
        with self._lock:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self):
        with self._lock:
            self._fh.close()


def replay_losses(log_path) -> dict[tuple[int, int], float]:
    """Rebuild the per-(particle, epoch) published losses from a run log."""
    losses = {}
    with open(log_path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("event") == "publish":
                losses[(rec["particle_id"], rec["epoch"])] = rec["loss"]
    return losses


class _RunState:
    """Mutable barrier state guarded by the server lock."""

    def __init__(self, expected: int):
        self.expected = expected
        self.registered = 0
        self.started = False
        self.next_epoch: dict[int, int] = {}
        self.pending: dict[int, dict[int, dict]] = {}   # epoch -> pid -> payload
        self.snapshots: dict[int, bytes] = {}           # epoch -> framed reply
        self.completed: set[int] = set()
        self.failed = False
        self.fail_reason = ""


class CoordinatorServer:
    """TCP coordinator for one run of ``expected_particles`` workers."""

    def __init__(self, host: str, port: int, expected_particles: int,
                 run_id: str, log_path,
                 barrier_timeout: float = DEFAULT_BARRIER_TIMEOUT):
        if expected_particles < 1:
            raise ProtocolError("expected_particles must be >= 1")
        self.run_id = run_id
        self.barrier_timeout = barrier_timeout
        self.log = RunLog(log_path)
        self._state = _RunState(expected_particles)
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._done = threading.Event()
        self._threads: list[threading.Thread] = []
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.25)
        self.address = self._listener.getsockname()

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve, name="coordinator", daemon=True)
        t.start()
        return t

    def serve(self) -> None:
        """Accept connections until the run completes or fails."""
        try:
            while not self._done.is_set():
                try:
                    conn, _ = self._listener.accept()
                except socket.timeout:
                    continue
                t = threading.Thread(target=self._handle, args=(conn,), daemon=True)
                t.start()
                self._threads.append(t)
        finally:
            self._listener.close()

    def stop(self) -> None:
        self._done.set()
        for t in self._threads:
            t.join(timeout=5)
        self.log.close()

    def wait(self, timeout: float | None = None) -> bool:
        """Block until the run completes or fails; True when done."""
        return self._done.wait(timeout)

    @property
    def failed(self) -> bool:
        with self._lock:
            return self._state.failed

    # -- failure -----------------------------------------------------------

    def _fail_locked(self, reason: str) -> None:
        if not self._state.failed:
            self._state.failed = True
            self._state.fail_reason = reason
            self.log.append("run_failed", self.run_id, reason=reason)
            self._cond.notify_all()
            self._done.set()

    def _error(self, sock, particle_id: int, epoch: int, reason: str) -> None:
        send_message(sock, encode_message(
            Kind.ERROR, self.run_id, particle_id, epoch, {"reason": reason}))

    # -- message handling ----------------------------------------------------

    def _handle(self, conn: socket.socket) -> None:
        conn.settimeout(None)
        particle_id = -1
        try:
            with conn:
                while not self._done.is_set():
                    msg = recv_message(conn)
                    kind = msg.kind
                    if kind is Kind.REGISTER:
                        particle_id = self._on_register(conn, msg)
                    elif kind is Kind.PUBLISH_STATE:
                        self._on_publish(conn, msg)
                    elif kind is Kind.RUN_COMPLETE:
                        if self._on_complete(conn, msg):
                            return
                    elif kind is Kind.HEARTBEAT:
                        send_message(conn, encode_message(
                            Kind.HEARTBEAT, self.run_id, msg.particle_id, msg.epoch))
                    else:
                        self._error(conn, msg.particle_id, msg.epoch,
                                    f"unexpected message kind {kind.value!r}")
        except ProtocolError:
            # A vanished worker is handled by the barrier timeout, not here.
            pass

    def _on_register(self, conn, msg: Message) -> int:
        with self._lock:
            st = self._state
            if st.failed:
                self._error(conn, -1, -1, f"run failed: {st.fail_reason}")
                return -1
            if st.started:
                self._error(conn, -1, -1,
                            f"run already started with {st.expected} particles")
                return -1
            pid = st.registered
            st.registered += 1
            st.next_epoch[pid] = 0
            if st.registered == st.expected:
                st.started = True
                self.log.append("run_start", self.run_id,
                                expected_particles=st.expected)
            self.log.append("register", self.run_id, particle_id=pid)
        send_message(conn, encode_message(
            Kind.REGISTER_ACK, self.run_id, pid, -1,
            {"expected_particles": self._state.expected}))
        return pid

    def _on_publish(self, conn, msg: Message) -> None:
        pid, epoch = msg.particle_id, msg.epoch
        with self._lock:
            st = self._state
            if st.failed:
                self._error(conn, pid, epoch, f"run failed: {st.fail_reason}")
                return
            if pid not in st.next_epoch:
                self._error(conn, pid, epoch, f"particle {pid} is not registered")
                return
            expected = st.next_epoch[pid]
            if epoch != expected:
                reason = (f"duplicate publish for epoch {epoch}" if epoch < expected
                          else f"wrong epoch {epoch}, expected {expected}")
                self._error(conn, pid, epoch, reason)
                return
            payload = msg.payload
            try:
                self.log.append("publish", self.run_id, epoch=epoch, particle_id=pid,
                                loss=payload.get("loss"),
                                digest=position_digest(payload.get("position", [])))
            except OSError as exc:
                self._fail_locked(f"run log write failed: {exc}")
                self._error(conn, pid, epoch, f"storage failure: {exc}")
                return
            st.pending.setdefault(epoch, {})[pid] = payload
            st.next_epoch[pid] = epoch + 1
            barrier_full = len(st.pending[epoch]) == st.expected
            if barrier_full:
                # Write-ahead rule: all publish records are flushed (above)
                # before the snapshot exists anywhere.
                reply = encode_message(
                    Kind.SNAPSHOT_REPLY, self.run_id, -1, epoch,
                    snapshot_to_payload(epoch, st.pending.pop(epoch)))
                st.snapshots[epoch] = reply
                self.log.append("snapshot_release", self.run_id, epoch=epoch)
                self._cond.notify_all()
        send_message(conn, encode_message(Kind.SNAPSHOT_READY, self.run_id, pid, epoch))
        self._push_snapshot(conn, pid, epoch)

    def _push_snapshot(self, conn, pid: int, epoch: int) -> None:
        deadline = time.monotonic() + self.barrier_timeout
        with self._lock:
            st = self._state
            while epoch not in st.snapshots and not st.failed:
                remaining = deadline - time.monotonic()
                if remaining <= 0 or not self._cond.wait(timeout=remaining):
                    self._fail_locked(
                        f"barrier timeout at epoch {epoch}: "
                        f"{len(st.pending.get(epoch, {}))}/{st.expected} published")
                    break
            if st.failed:
                reason = st.fail_reason
                reply = None
            else:
                reply = st.snapshots[epoch]
        if reply is None:
            self._error(conn, pid, epoch, f"run failed: {reason}")
        else:
            # Byte-identical snapshot for every particle.
            send_message(conn, reply)

    def _on_complete(self, conn, msg: Message) -> bool:
        with self._lock:
            st = self._state
            st.completed.add(msg.particle_id)
            self.log.append("complete", self.run_id, particle_id=msg.particle_id,
                            epoch=msg.epoch)
            all_done = len(st.completed) == st.expected
            if all_done and not st.failed:
                self.log.append("run_complete", self.run_id)
                self._done.set()
        send_message(conn, encode_message(
            Kind.RUN_COMPLETE, self.run_id, msg.particle_id, msg.epoch))
        return True

"""Wire protocol for the state-exchange service.

Messages are UTF-8 JSON objects framed by a 4-byte big-endian length
prefix. Every message carries {kind, run_id, particle_id, epoch, payload};
vectors travel as JSON arrays of decimal doubles (repr round-trips float64
exactly, so decoded snapshots are bitwise equal to what was published).
"""

from __future__ import annotations

import enum
import json
import socket
import struct
from typing import Any

import numpy as np

from .core import NeighborSnapshot, SnapshotEntry
from .errors import ProtocolError

__all__ = ["Kind", "Message", "encode_message", "send_message", "recv_message",
           "entry_to_payload", "payload_to_entry", "snapshot_to_payload",
           "payload_to_snapshot"]

MAX_MESSAGE_BYTES = 1 << 28
_HEADER = struct.Struct(">I")


class Kind(enum.Enum):
    REGISTER = "register"
    REGISTER_ACK = "register_ack"
    PUBLISH_STATE = "publish_state"
    SNAPSHOT_READY = "snapshot_ready"
    SNAPSHOT_REPLY = "snapshot_reply"
    RUN_COMPLETE = "run_complete"
    ERROR = "error"
    HEARTBEAT = "heartbeat"


class Message(dict):
    """A decoded protocol message with attribute-style accessors."""

    @property
    def kind(self) -> Kind:
        return Kind(self["kind"])

    @property
    def run_id(self) -> str:
        return self["run_id"]

    @property
    def particle_id(self) -> int:
        return self["particle_id"]

    @property
    def epoch(self) -> int:
        return self["epoch"]

    @property
    def payload(self) -> dict:
        return self.get("payload") or {}


def encode_message(kind: Kind, run_id: str, particle_id: int, epoch: int,
                   payload: dict | None = None) -> bytes:
    body = json.dumps(
        {"kind": kind.value, "run_id": run_id, "particle_id": particle_id,
         "epoch": epoch, "payload": payload},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    if len(body) > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"message of {len(body)} bytes exceeds the frame limit")
    return _HEADER.pack(len(body)) + body


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except socket.timeout as exc:
            raise ProtocolError("socket read timed out") from exc
        if not chunk:
            raise ProtocolError("connection closed mid-message" if buf or n
                                else "connection closed")
        buf += chunk
    return bytes(buf)


def send_message(sock: socket.socket, data: bytes) -> None:
    try:
        sock.sendall(data)
    except OSError as exc:
        raise ProtocolError(f"send failed: {exc}") from exc


def recv_message(sock: socket.socket) -> Message:
    """Read one framed message; raises ProtocolError on EOF/timeout/garbage."""
    header = _recv_exact(sock, _HEADER.size)
    (length,) = _HEADER.unpack(header)
    if length > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"frame length {length} exceeds the limit")
    body = _recv_exact(sock, length)
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed message body: {exc}") from exc
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ProtocolError("message must be a JSON object with a 'kind'")
    try:
        Kind(obj["kind"])
    except ValueError:
        raise ProtocolError(f"unknown message kind {obj['kind']!r}") from None
    return Message(obj)


# ---------------------------------------------------------------------------
# payload converters

def _vec(x: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(x, dtype=float)]


def entry_to_payload(entry: SnapshotEntry) -> dict[str, Any]:
    return {
        "position": _vec(entry.position),
        "gradient": _vec(entry.gradient),
        "learning_rate": float(entry.learning_rate),
        "loss": float(entry.loss),
        "personal_best": _vec(entry.personal_best),
        "personal_best_loss": float(entry.personal_best_loss),
    }


def payload_to_entry(particle_id: int, payload: dict) -> SnapshotEntry:
    try:
        return SnapshotEntry(
            particle_id=particle_id,
            position=np.asarray(payload["position"], dtype=float),
            gradient=np.asarray(payload["gradient"], dtype=float),
            learning_rate=float(payload["learning_rate"]),
            loss=float(payload["loss"]),
            personal_best=np.asarray(payload["personal_best"], dtype=float),
            personal_best_loss=float(payload["personal_best_loss"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed state payload: {exc}") from exc


def snapshot_to_payload(epoch: int, entries_by_id: dict[int, dict]) -> dict:
    return {
        "epoch": epoch,
        "entries": [dict(entries_by_id[pid], particle_id=pid)
                    for pid in sorted(entries_by_id)],
    }


def payload_to_snapshot(payload: dict) -> NeighborSnapshot:
    try:
        entries = tuple(
            payload_to_entry(int(item["particle_id"]), item)
            for item in payload["entries"])
        return NeighborSnapshot(epoch=int(payload["epoch"]), entries=entries)
    except (KeyError, TypeError) as exc:
        raise ProtocolError(f"malformed snapshot payload: {exc}") from exc

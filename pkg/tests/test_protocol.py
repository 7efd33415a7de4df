import json
import socket
import struct
import threading

import numpy as np
import pytest

from swarmgrad.core import NeighborSnapshot, SnapshotEntry
from swarmgrad.errors import ProtocolError
from swarmgrad.protocol import (
    Kind,
    encode_message,
    entry_to_payload,
    payload_to_entry,
    payload_to_snapshot,
    recv_message,
    send_message,
    snapshot_to_payload,
)


def socket_pair():
    server = socket.create_server(("127.0.0.1", 0))
    host, port = server.getsockname()
    client = socket.create_connection((host, port))
    conn, _ = server.accept()
    server.close()
    return client, conn


class TestFraming:
    def test_roundtrip(self):
        client, conn = socket_pair()
        try:
            data = encode_message(Kind.REGISTER, "run-1", -1, -1,
                                  {"expected_particles": 4})
            send_message(client, data)
            msg = recv_message(conn)
            assert msg.kind is Kind.REGISTER
            assert msg.run_id == "run-1"
            assert msg.payload == {"expected_particles": 4}
        finally:
            client.close()
            conn.close()

    def test_length_prefix_is_big_endian(self):
        data = encode_message(Kind.HEARTBEAT, "r", 0, 0)
        (length,) = struct.unpack(">I", data[:4])
        assert length == len(data) - 4
        json.loads(data[4:].decode("utf-8"))

    def test_eof_mid_message(self):
        client, conn = socket_pair()
        data = encode_message(Kind.HEARTBEAT, "r", 0, 0)
        client.sendall(data[:7])
        client.close()
        with pytest.raises(ProtocolError):
            recv_message(conn)
        conn.close()

    def test_garbage_body_rejected(self):
        client, conn = socket_pair()
        body = b"not json"
        client.sendall(struct.pack(">I", len(body)) + body)
        with pytest.raises(ProtocolError):
            recv_message(conn)
        client.close()
        conn.close()

    def test_unknown_kind_rejected(self):
        client, conn = socket_pair()
        body = json.dumps({"kind": "bogus"}).encode()
        client.sendall(struct.pack(">I", len(body)) + body)
        with pytest.raises(ProtocolError):
            recv_message(conn)
        client.close()
        conn.close()

    def test_oversized_frame_rejected(self):
        client, conn = socket_pair()
        client.sendall(struct.pack(">I", 1 << 30))
        with pytest.raises(ProtocolError):
            recv_message(conn)
        client.close()
        conn.close()


class TestPayloads:
    def entry(self, pid=2):
        rng = np.random.default_rng(pid)
        pos = rng.normal(size=7)
        return SnapshotEntry(pid, pos, rng.normal(size=7), 0.01,
                             float(rng.uniform()), pos + 1.0,
                             float(rng.uniform()))

    def test_entry_roundtrip_bitwise(self):
        entry = self.entry()
        # through JSON text, as the wire does
        payload = json.loads(json.dumps(entry_to_payload(entry)))
        back = payload_to_entry(entry.particle_id, payload)
        np.testing.assert_array_equal(back.position, entry.position)
        np.testing.assert_array_equal(back.gradient, entry.gradient)
        np.testing.assert_array_equal(back.personal_best, entry.personal_best)
        assert back.loss == entry.loss
        assert back.learning_rate == entry.learning_rate

    def test_snapshot_roundtrip(self):
        entries = {pid: entry_to_payload(self.entry(pid)) for pid in (3, 0, 1)}
        payload = json.loads(json.dumps(snapshot_to_payload(5, entries)))
        snap = payload_to_snapshot(payload)
        assert isinstance(snap, NeighborSnapshot)
        assert snap.epoch == 5
        assert snap.ids() == [0, 1, 3]

    def test_malformed_payload(self):
        with pytest.raises(ProtocolError):
            payload_to_entry(0, {"position": [1.0]})
        with pytest.raises(ProtocolError):
            payload_to_snapshot({"epoch": 1})

    def test_entry_psi_and_corrected(self):
        entry = SnapshotEntry(0, np.array([1.0, 2.0]), np.array([10.0, -10.0]),
                              0.1, 1.0, np.zeros(2), 1.0)
        np.testing.assert_array_equal(entry.gradient_step(), [-1.0, 1.0])
        np.testing.assert_array_equal(entry.gradient_corrected(), [0.0, 3.0])

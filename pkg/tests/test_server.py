import json
import socket
import struct
import threading

import pytest

from dmgsim.config import load_scenario
from dmgsim.protocol import Message, encode_message, read_message, write_message
from dmgsim.server import EnvServer, parse_listen


def scenario_doc(duration=300_000):
    return {
        "stations": [
            {"aid": 0, "role": "PCP_AP", "position": [0, 0]},
            {"aid": 1, "position": [3, 0]},
        ],
        "flows": [
            {"flowId": 1, "srcAid": 1, "dstAid": 0, "kind": "CBR", "meanRateBps": 50_000_000}
        ],
        "tspecs": [
            {"flowId": 1, "allocationPeriodUs": 25_000, "minDurationUs": 2_000, "maxDurationUs": 4_000}
        ],
        "sim": {"durationUs": duration, "seed": 7},
    }


@pytest.fixture()
def server():
    srv = EnvServer(load_scenario(scenario_doc()), "127.0.0.1:0")
    srv.start()
    yield srv
    srv.stop()


def connect(server):
    host, port = server.bound_address
    conn = socket.create_connection((host, port), timeout=10)
    return conn, conn.makefile("rwb")


class TestListenParsing:
    def test_tcp(self):
        assert parse_listen("127.0.0.1:5555") == ("tcp", ("127.0.0.1", 5555))

    def test_unix(self):
        assert parse_listen("unix:/tmp/env.sock") == ("unix", "/tmp/env.sock")

    def test_garbage(self):
        with pytest.raises(ValueError):
            parse_listen("nonsense")


class TestSessionProtocol:
    def test_full_episode(self, server):
        conn, stream = connect(server)
        write_message(stream, Message("HELLO"))
        hello = read_message(stream)
        assert hello.type == "HELLO"
        assert hello.payload["layout"]["size"] == 8
        write_message(stream, Message("RESET", {"seed": 7}))
        first = read_message(stream)
        assert first.type == "OBS" and first.payload["done"] is False
        steps = 0
        done = False
        while not done:
            write_message(stream, Message("STEP", {"action": {}}))
            reply = read_message(stream)
            done = reply.payload["done"]
            steps += 1
            assert reply.type == ("DONE" if done else "OBS")
        assert steps == 3
        conn.close()

    def test_step_before_hello_rejected(self, server):
        conn, stream = connect(server)
        write_message(stream, Message("STEP", {"action": {}}))
        reply = read_message(stream)
        assert reply.type == "ERROR" and reply.payload["error"] == "protocol"
        conn.close()

    def test_step_after_done_is_protocol_error(self, server):
        conn, stream = connect(server)
        write_message(stream, Message("HELLO"))
        read_message(stream)
        write_message(stream, Message("RESET", {}))
        read_message(stream)
        for _ in range(3):
            write_message(stream, Message("STEP", {"action": {}}))
            read_message(stream)
        write_message(stream, Message("STEP", {"action": {}}))
        reply = read_message(stream)
        assert reply.type == "ERROR" and reply.payload["error"] == "protocol"
        conn.close()

    def test_version_mismatch_gets_version_error_reply(self, server):
        conn, stream = connect(server)
        body = json.dumps(
            {"protocolVersion": "2.0", "type": "HELLO", "payload": {}}
        ).encode()
        stream.write(struct.pack(">I", len(body)) + body)
        stream.flush()
        reply = read_message(stream)
        assert reply.type == "ERROR" and reply.payload["error"] == "version"
        conn.close()

    def test_truncated_frame_closes_connection(self, server):
        conn, stream = connect(server)
        raw = encode_message(Message("HELLO"))
        stream.write(raw[: len(raw) - 2])
        stream.flush()
        conn.shutdown(socket.SHUT_WR)
        assert stream.read(1) == b""  # server closed without replying
        conn.close()

    def test_malformed_action_reported_with_field(self, server):
        conn, stream = connect(server)
        write_message(stream, Message("HELLO"))
        read_message(stream)
        write_message(stream, Message("RESET", {}))
        read_message(stream)
        write_message(stream, Message("STEP", {"action": {"durationAdjust": {"99": 1}}}))
        reply = read_message(stream)
        assert reply.type == "ERROR"
        assert reply.payload["error"] == "malformedAction"
        assert "durationAdjust.99" in reply.payload["field"]
        conn.close()

    def test_sessions_are_isolated(self, server):
        conn_a, stream_a = connect(server)
        conn_b, stream_b = connect(server)
        for stream in (stream_a, stream_b):
            write_message(stream, Message("HELLO"))
            read_message(stream)
            write_message(stream, Message("RESET", {"seed": 7}))
            read_message(stream)
        # stepping A must not advance B
        write_message(stream_a, Message("STEP", {"action": {}}))
        obs_a = read_message(stream_a).payload["observation"]
        write_message(stream_b, Message("STEP", {"action": {}}))
        obs_b = read_message(stream_b).payload["observation"]
        assert obs_a["biIndex"] == obs_b["biIndex"] == 1
        assert json.dumps(obs_a, sort_keys=True) == json.dumps(obs_b, sort_keys=True)
        conn_a.close()
        conn_b.close()

    def test_reset_with_bad_scenario_is_schema_error(self, server):
        conn, stream = connect(server)
        write_message(stream, Message("HELLO"))
        read_message(stream)
        write_message(stream, Message("RESET", {"scenario": {"stations": []}}))
        reply = read_message(stream)
        assert reply.type == "ERROR" and reply.payload["error"] == "schema"
        conn.close()

    def test_reset_with_seed_override_changes_trajectory(self, server):
        conn, stream = connect(server)
        write_message(stream, Message("HELLO"))
        read_message(stream)

        def episode(seed):
            write_message(stream, Message("RESET", {"seed": seed}))
            read_message(stream)
            rewards = []
            done = False
            while not done:
                write_message(stream, Message("STEP", {"action": {}}))
                reply = read_message(stream)
                rewards.append(reply.payload["reward"])
                done = reply.payload["done"]
            return rewards

        assert episode(1) == episode(1)
        conn.close()


class TestUnixSocket:
    def test_unix_round_trip(self, tmp_path):
        path = str(tmp_path / "env.sock")
        srv = EnvServer(load_scenario(scenario_doc(duration=100_000)), f"unix:{path}")
        srv.start()
        try:
            conn = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            conn.connect(path)
            stream = conn.makefile("rwb")
            write_message(stream, Message("HELLO"))
            assert read_message(stream).type == "HELLO"
            conn.close()
        finally:
            srv.stop()

"""Stream-socket server hosting isolated environment sessions.

One session per connection; sessions never share simulation state, so
several agents can train against the same server process concurrently.
"""

from __future__ import annotations

import socket
import threading
from typing import Optional

from .config import Scenario, SchemaError
from .protocol import (
    PROTOCOL_VERSION,
    FramingError,
    Message,
    ProtocolError,
    VersionError,
    read_message,
    write_message,
)
from .rlenv import EnvSession, EpisodeError, MalformedAction


def parse_listen(addr: str):
    """"host:port" for TCP or "unix:/path" for a unix-domain socket."""
    if addr.startswith("unix:"):
        return ("unix", addr[len("unix:") :])
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"listen address {addr!r} is neither host:port nor unix:path")
    return ("tcp", (host or "127.0.0.1", int(port)))


def _error_payload(code: str, message: str) -> dict:
    return {"error": code, "message": message}


class EnvServer:
    def __init__(self, scenario: Scenario, listen: str):
        self.scenario = scenario
        self.kind, self.addr = parse_listen(listen)
        self._sock: Optional[socket.socket] = None
        self._threads: list[threading.Thread] = []
        self._stopping = threading.Event()

    @property
    def bound_address(self):
        return self._sock.getsockname() if self._sock else None

    def start(self) -> None:
        if self.kind == "unix":
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            sock.bind(self.addr)
        else:
            sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            sock.bind(self.addr)
        sock.listen()
        self._sock = sock
        t = threading.Thread(target=self._accept_loop, daemon=True)
        t.start()
        self._threads.append(t)

    def serve_forever(self) -> None:
        self.start()
        try:
            self._stopping.wait()
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def stop(self) -> None:
        self._stopping.set()
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve_connection, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_connection(self, conn: socket.socket) -> None:
        session = EnvSession(self.scenario)
        greeted = False
        stream = conn.makefile("rwb")
        try:
            while True:
                try:
                    msg = read_message(stream)
                except VersionError as e:
                    write_message(stream, Message("ERROR", _error_payload("version", str(e))))
                    continue
                except FramingError:
                    return  # close quietly: peer sent garbage or died mid-frame
                except ProtocolError as e:
                    write_message(stream, Message("ERROR", _error_payload("protocol", str(e))))
                    continue
                if msg is None:
                    return  # clean EOF
                try:
                    reply = self._dispatch(session, msg, greeted)
                    if msg.type == "HELLO":
                        greeted = True
                except MalformedAction as e:
                    reply = Message(
                        "ERROR",
                        {"error": "malformedAction", "field": e.fieldname, "message": str(e)},
                    )
                except (EpisodeError, ProtocolError) as e:
                    reply = Message("ERROR", _error_payload("protocol", str(e)))
                except SchemaError as e:
                    reply = Message("ERROR", _error_payload("schema", str(e)))
                write_message(stream, reply)
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            try:
                stream.close()
            except OSError:
                pass
            conn.close()

    def _dispatch(self, session: EnvSession, msg: Message, greeted: bool) -> Message:
        if msg.type == "HELLO":
            return Message(
                "HELLO",
                {
                    "protocolVersion": PROTOCOL_VERSION,
                    "layout": session.layout(),
                    "scenario": session.scenario_summary(),
                },
            )
        if not greeted:
            raise ProtocolError("say HELLO first")
        if msg.type == "RESET":
            seed = msg.payload.get("seed")
            if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
                raise ProtocolError("seed must be an integer")
            obs = session.reset(
                seed=seed,
                scenario_doc=msg.payload.get("scenario"),
                reward_weights=msg.payload.get("rewardWeights"),
            )
            return Message("OBS", {"observation": obs, "reward": 0.0, "done": session.done, "info": {}})
        if msg.type == "STEP":
            obs, reward, done, info = session.step(msg.payload.get("action", {}))
            reply_type = "DONE" if done else "OBS"
            return Message(reply_type, {"observation": obs, "reward": reward, "done": done, "info": info})
        raise ProtocolError(f"client may not send {msg.type}")

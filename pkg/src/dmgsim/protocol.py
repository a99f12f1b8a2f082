"""Length-prefixed message protocol for the environment server.

Frame layout: 4-byte big-endian payload length, then a UTF-8 JSON body
{"protocolVersion": "1.0", "type": <TYPE>, "payload": {...}}.
Unknown body fields are ignored for forward compatibility; only a major
version mismatch is an error.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Optional

PROTOCOL_VERSION = "1.0"
MAX_FRAME_BYTES = 64 * 1024 * 1024
HEADER = struct.Struct(">I")

MESSAGE_TYPES = ("HELLO", "RESET", "STEP", "OBS", "DONE", "ERROR")


class ProtocolError(Exception):
    pass


class FramingError(ProtocolError):
    pass


class VersionError(ProtocolError):
    pass


@dataclass(frozen=True)
class Message:
    type: str
    payload: dict = field(default_factory=dict)
    protocol_version: str = PROTOCOL_VERSION


def _major(version: str) -> str:
    return version.split(".", 1)[0]


def encode_message(msg: Message) -> bytes:
    """Serialize to a framed byte string; key order is canonical."""
    if msg.type not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type {msg.type!r}")
    body = json.dumps(
        {
            "protocolVersion": msg.protocol_version,
            "type": msg.type,
            "payload": msg.payload,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    if len(body) > MAX_FRAME_BYTES:
        raise FramingError(f"frame of {len(body)} bytes exceeds the limit")
    return HEADER.pack(len(body)) + body


def decode_message(data: bytes) -> Message:
    """Parse one frame body; raises VersionError on a major mismatch."""
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FramingError(f"undecodable frame body: {e}") from e
    if not isinstance(obj, dict):
        raise FramingError("frame body must be a JSON object")
    version = obj.get("protocolVersion")
    if not isinstance(version, str):
        raise FramingError("missing protocolVersion")
    if _major(version) != _major(PROTOCOL_VERSION):
        raise VersionError(f"protocol version {version} not compatible with {PROTOCOL_VERSION}")
    typ = obj.get("type")
    if typ not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type {typ!r}")
    payload = obj.get("payload", {})
    if not isinstance(payload, dict):
        raise FramingError("payload must be a JSON object")
    return Message(type=typ, payload=payload, protocol_version=version)


def read_frame(stream: BinaryIO) -> Optional[bytes]:
    """Read one frame body; None on clean EOF, FramingError on truncation."""
    header = stream.read(HEADER.size)
    if not header:
        return None
    if len(header) < HEADER.size:
        raise FramingError("truncated frame header")
    (length,) = HEADER.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise FramingError(f"advertised frame of {length} bytes exceeds the limit")
    body = b""
    while len(body) < length:
        chunk = stream.read(length - len(body))
        if not chunk:
            raise FramingError("truncated frame body")
        body += chunk
    return body


def write_frame(stream: BinaryIO, data: bytes) -> None:
    stream.write(data)
    stream.flush()


def read_message(stream: BinaryIO) -> Optional[Message]:
    body = read_frame(stream)
    if body is None:
        return None
    return decode_message(body)


def write_message(stream: BinaryIO, msg: Message) -> None:
    write_frame(stream, encode_message(msg))

"""Binary frame codec for the participant wire protocol.

Every message travels as one frame:

    offset  size  content
    0       4     magic, ASCII "FBR1"
    4       1     message type (see MessageType)
    5       4     payload length, unsigned little-endian
    9       n     payload

Payload layouts (all integers little-endian, all floats IEEE-754 binary64
little-endian, all strings UTF-8 prefixed by a u32 byte length):

    HELLO     (1)  name string, 32-byte schema digest
    MESH      (2)  mesh name string, flattened vertex coordinates (f64 each)
    INIT_ACK  (3)  empty
    DATA      (4)  field id string, u64 window index, field values (f64 each)
    ADVANCE   (5)  u64 window index
    FINALIZE  (6)  empty
    ERROR     (7)  reason, raw UTF-8 (whole payload)

Encoding is canonical: a message has exactly one byte representation and
``decode_frame(encode_frame(m)) == m``.  Frames larger than MAX_PAYLOAD
(2**28 bytes) are rejected on both sides to guard against corrupt length
fields.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from .errors import ProtocolError

MAGIC = b"FBR1"
MAX_PAYLOAD = 2**28
HEADER = struct.Struct("<4sBI")
HEADER_SIZE = HEADER.size
DIGEST_SIZE = 32


class MessageType(IntEnum):
    HELLO = 1
    MESH = 2
    INIT_ACK = 3
    DATA = 4
    ADVANCE = 5
    FINALIZE = 6
    ERROR = 7


@dataclass(frozen=True)
class Hello:
    participant: str
    schema_digest: bytes


@dataclass(frozen=True)
class Mesh:
    mesh: str
    coords: tuple[float, ...]


@dataclass(frozen=True)
class InitAck:
    pass


@dataclass(frozen=True)
class Data:
    field: str
    window: int
    values: tuple[float, ...]


@dataclass(frozen=True)
class Advance:
    window: int


@dataclass(frozen=True)
class Finalize:
    pass


@dataclass(frozen=True)
class Error:
    reason: str


Message = Hello | Mesh | InitAck | Data | Advance | Finalize | Error


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _unpack_str(buf: bytes, off: int) -> tuple[str, int]:
    if off + 4 > len(buf):
        raise ProtocolError("truncated string length")
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    if off + n > len(buf):
        raise ProtocolError("truncated string body")
    try:
        s = buf[off : off + n].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"invalid UTF-8 in string: {exc}") from exc
    return s, off + n


def _pack_floats(values) -> bytes:
    return struct.pack(f"<{len(values)}d", *values)


def _unpack_floats(buf: bytes, off: int) -> tuple[float, ...]:
    rest = len(buf) - off
    if rest % 8:
        raise ProtocolError("float payload not a multiple of 8 bytes")
    return struct.unpack_from(f"<{rest // 8}d", buf, off)


def encode_frame(msg: Message) -> bytes:
    """Serialize a message into its unique frame byte string."""
    if isinstance(msg, Hello):
        if len(msg.schema_digest) != DIGEST_SIZE:
            raise ProtocolError(f"schema digest must be {DIGEST_SIZE} bytes")
        mtype, payload = MessageType.HELLO, _pack_str(msg.participant) + msg.schema_digest
    elif isinstance(msg, Mesh):
        mtype, payload = MessageType.MESH, _pack_str(msg.mesh) + _pack_floats(msg.coords)
    elif isinstance(msg, InitAck):
        mtype, payload = MessageType.INIT_ACK, b""
    elif isinstance(msg, Data):
        mtype = MessageType.DATA
        payload = _pack_str(msg.field) + struct.pack("<Q", msg.window) + _pack_floats(msg.values)
    elif isinstance(msg, Advance):
        mtype, payload = MessageType.ADVANCE, struct.pack("<Q", msg.window)
    elif isinstance(msg, Finalize):
        mtype, payload = MessageType.FINALIZE, b""
    elif isinstance(msg, Error):
        mtype, payload = MessageType.ERROR, msg.reason.encode("utf-8")
    else:
        raise ProtocolError(f"cannot encode {type(msg).__name__}")
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError("payload exceeds protocol maximum")
    return HEADER.pack(MAGIC, int(mtype), len(payload)) + payload


def decode_header(header: bytes) -> tuple[MessageType, int]:
    """Validate a 9-byte frame header, return (type, payload length)."""
    if len(header) != HEADER_SIZE:
        raise ProtocolError("truncated frame header")
    magic, mtype, length = HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    try:
        mtype = MessageType(mtype)
    except ValueError:
        raise ProtocolError(f"unknown message type {mtype}") from None
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"oversize payload ({length} bytes)")
    return mtype, length


def decode_payload(mtype: MessageType, payload: bytes) -> Message:
    if mtype is MessageType.HELLO:
        name, off = _unpack_str(payload, 0)
        if len(payload) - off != DIGEST_SIZE:
            raise ProtocolError("HELLO digest must be exactly 32 bytes")
        return Hello(name, payload[off:])
    if mtype is MessageType.MESH:
        mesh, off = _unpack_str(payload, 0)
        return Mesh(mesh, _unpack_floats(payload, off))
    if mtype is MessageType.INIT_ACK:
        if payload:
            raise ProtocolError("INIT_ACK carries no payload")
        return InitAck()
    if mtype is MessageType.DATA:
        field, off = _unpack_str(payload, 0)
        if off + 8 > len(payload):
            raise ProtocolError("truncated DATA window index")
        (window,) = struct.unpack_from("<Q", payload, off)
        return Data(field, window, _unpack_floats(payload, off + 8))
    if mtype is MessageType.ADVANCE:
        if len(payload) != 8:
            raise ProtocolError("ADVANCE payload must be 8 bytes")
        return Advance(struct.unpack("<Q", payload)[0])
    if mtype is MessageType.FINALIZE:
        if payload:
            raise ProtocolError("FINALIZE carries no payload")
        return Finalize()
    if mtype is MessageType.ERROR:
        try:
            return Error(payload.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"invalid UTF-8 in ERROR reason: {exc}") from exc
    raise ProtocolError(f"unknown message type {mtype}")


def decode_frame(frame: bytes) -> Message:
    """Decode one complete frame; inverse of encode_frame."""
    mtype, length = decode_header(frame[:HEADER_SIZE])
    payload = frame[HEADER_SIZE:]
    if len(payload) != length:
        raise ProtocolError(f"payload length mismatch (declared {length}, got {len(payload)})")
    return decode_payload(mtype, payload)

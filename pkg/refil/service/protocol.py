# refil/service/protocol.py
"""SPLT frame codec.

Frame (little-endian):

    b"SPLT" | version u8 | msg type u8 | payload length u64 | payload

Payloads:

    Hello              model id | has-shape u8 | [rank u8 | dims u32 * rank]
    ActivationRequest  model id | tensor | sigma f32 | dFIL f32 | request id u64
    PredictionResponse request id u64 | tensor
    Error              code u16 | message (u32 length + utf-8)

A model id is a u16 length followed by utf-8 bytes. A tensor is rank u8,
dims u32 * rank, then float32 data. An absent sigma or dFIL (telemetry off)
is sent as a quiet NaN.
"""
import math
import struct
from typing import Iterator, List, Optional, Tuple

import numpy as np

from refil.errors import ProtocolError
from refil.service.models import (
    ActivationPayload, ErrorMessage, Hello, MsgType, PredictionResponse, WireMessage,
)

MAGIC = b"SPLT"
VERSION = 1
HEADER = struct.Struct("<4sBBQ")
CANONICAL_NAN = struct.unpack("<f", b"\x00\x00\xc0\x7f")[0]


# -- encoding ---------------------------------------------------------------

def _pack_str(value: str, width: str = "H") -> bytes:
    raw = value.encode("utf-8")
    limit = 2 ** (8 * struct.calcsize(width)) - 1
    if len(raw) > limit:
        raise ProtocolError(f"string of {len(raw)} bytes does not fit a {width} length")
    return struct.pack(f"<{width}", len(raw)) + raw


def _pack_shape(shape) -> bytes:
    shape = tuple(int(d) for d in shape)
    if len(shape) > 255:
        raise ProtocolError(f"rank {len(shape)} exceeds 255")
    return struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)


def _pack_tensor(arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f4")
    return _pack_shape(data.shape) + data.tobytes()


def _pack_telemetry(value: Optional[float]) -> bytes:
    return struct.pack("<f", CANONICAL_NAN) if value is None else np.float32(value).astype("<f4").tobytes()


def _payload(msg: WireMessage) -> Tuple[MsgType, bytes]:
    if isinstance(msg, Hello):
        shape = b"\x00" if msg.input_shape is None else b"\x01" + _pack_shape(msg.input_shape)
        return MsgType.HELLO, _pack_str(msg.model_id) + shape
    if isinstance(msg, ActivationPayload):
        body = (_pack_str(msg.model_id) + _pack_tensor(msg.tensor)
                + _pack_telemetry(msg.sigma) + _pack_telemetry(msg.achieved_dfil)
                + struct.pack("<Q", msg.request_id))
        return MsgType.ACTIVATION_REQUEST, body
    if isinstance(msg, PredictionResponse):
        return MsgType.PREDICTION_RESPONSE, struct.pack("<Q", msg.request_id) + _pack_tensor(msg.tensor)
    if isinstance(msg, ErrorMessage):
        return MsgType.ERROR, struct.pack("<H", msg.code) + _pack_str(msg.message, "I")
    raise ProtocolError(f"cannot encode {type(msg).__name__}")


def encode(msg: WireMessage) -> bytes:
    msg_type, payload = _payload(msg)
    return HEADER.pack(MAGIC, VERSION, msg_type, len(payload)) + payload


# -- decoding ---------------------------------------------------------------

class _Reader:
    def __init__(self, buf: bytes, pos: int = 0, end: Optional[int] = None):
        self.buf = buf
        self.pos = pos
        self.end = len(buf) if end is None else end

    def take(self, fmt: str) -> Tuple:
        size = struct.calcsize(fmt)
        if self.pos + size > self.end:
            raise ProtocolError(f"truncated at byte {self.pos}: need {size}, have {self.end - self.pos}")
        values = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return values

    def string(self, width: str = "H") -> str:
        (n,) = self.take(f"<{width}")
        (raw,) = self.take(f"<{n}s")
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ProtocolError(f"invalid utf-8 string: {e}") from e

    def shape(self) -> Tuple[int, ...]:
        (rank,) = self.take("<B")
        return tuple(self.take(f"<{rank}I"))

    def tensor(self) -> np.ndarray:
        dims = self.shape()
        count = math.prod(dims)
        if count * 4 > self.end - self.pos:
            raise ProtocolError(f"tensor of shape {dims} needs {count * 4} bytes, {self.end - self.pos} remain")
        start = self.pos
        self.pos += count * 4
        return np.frombuffer(self.buf, dtype="<f4", count=count, offset=start).astype(np.float32).reshape(dims)

    def telemetry(self) -> Optional[float]:
        (value,) = self.take("<f")
        return None if math.isnan(value) else float(value)


def _decode_payload(msg_type: int, reader: _Reader) -> WireMessage:
    if msg_type == MsgType.HELLO:
        model_id = reader.string()
        (has_shape,) = reader.take("<B")
        return Hello(model_id, reader.shape() if has_shape else None)
    if msg_type == MsgType.ACTIVATION_REQUEST:
        model_id = reader.string()
        tensor = reader.tensor()
        sigma = reader.telemetry()
        dfil = reader.telemetry()
        (request_id,) = reader.take("<Q")
        return ActivationPayload(model_id, tensor, sigma, dfil, request_id)
    if msg_type == MsgType.PREDICTION_RESPONSE:
        (request_id,) = reader.take("<Q")
        return PredictionResponse(request_id, reader.tensor())
    (code,) = reader.take("<H")
    return ErrorMessage(code, reader.string("I"))


def decode_from(buf: bytes, offset: int = 0) -> Tuple[WireMessage, int]:
    """Decode the frame starting at ``offset``; returns it and the next offset."""
    if len(buf) - offset < HEADER.size:
        raise ProtocolError(f"truncated header: {len(buf) - offset} of {HEADER.size} bytes")
    magic, version, msg_type, length = HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}")
    try:
        msg_type = MsgType(msg_type)
    except ValueError:
        raise ProtocolError(f"unknown message type {msg_type}") from None
    start = offset + HEADER.size
    end = start + length
    if end > len(buf):
        raise ProtocolError(f"payload length {length} exceeds the {len(buf) - start} bytes received")
    reader = _Reader(buf, start, end)
    msg = _decode_payload(msg_type, reader)
    if reader.pos != end:
        raise ProtocolError(f"payload length {length} does not match the {reader.pos - start} bytes decoded")
    return msg, end


def decode(buf: bytes) -> WireMessage:
    """Decode exactly one frame."""
    msg, end = decode_from(buf)
    if end != len(buf):
        raise ProtocolError(f"{len(buf) - end} trailing bytes after frame")
    return msg


def iter_frames(buf: bytes) -> Iterator[WireMessage]:
    offset = 0
    while offset < len(buf):
        msg, offset = decode_from(buf, offset)
        yield msg


def decode_all(buf: bytes) -> List[WireMessage]:
    return list(iter_frames(buf))

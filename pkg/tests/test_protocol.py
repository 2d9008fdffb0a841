import struct

import numpy as np
import pytest

from refil.errors import ProtocolError
from refil.service import protocol
from refil.service.models import ActivationPayload, ErrorCode, ErrorMessage, Hello, MsgType, PredictionResponse


def test_header_layout():
    frame = protocol.encode(Hello("mlp-1000"))
    magic, version, msg_type, length = protocol.HEADER.unpack_from(frame)
    assert (magic, version, msg_type) == (b"SPLT", 1, MsgType.HELLO)
    assert length == len(frame) - protocol.HEADER.size
    assert protocol.HEADER.size == 14


def test_activation_request_round_trip():
    tensor = np.arange(12, dtype=np.float32).reshape(3, 4)
    msg = ActivationPayload("cnn-early", tensor, sigma=0.25, achieved_dfil=10.0, request_id=2 ** 63 + 5)
    decoded = protocol.decode(protocol.encode(msg))
    assert isinstance(decoded, ActivationPayload)
    assert decoded.model_id == "cnn-early"
    np.testing.assert_array_equal(decoded.tensor, tensor)
    assert decoded.sigma == 0.25
    assert decoded.achieved_dfil == 10.0
    assert decoded.request_id == 2 ** 63 + 5


def test_missing_telemetry_travels_as_nan():
    msg = ActivationPayload("m", np.zeros(2, dtype=np.float32))
    frame = protocol.encode(msg)
    # sigma and dFIL sit right before the trailing request id
    sigma, dfil = struct.unpack_from("<ff", frame, len(frame) - 16)
    assert np.isnan(sigma) and np.isnan(dfil)
    decoded = protocol.decode(frame)
    assert decoded.sigma is None and decoded.achieved_dfil is None


def test_hello_with_and_without_shape():
    assert protocol.decode(protocol.encode(Hello("ncf"))).input_shape is None
    assert protocol.decode(protocol.encode(Hello("ncf", (64,)))).input_shape == (64,)


def test_prediction_and_error_round_trip():
    reply = protocol.decode(protocol.encode(PredictionResponse(7, np.array([0.5, -1.0], dtype=np.float32))))
    assert reply.request_id == 7
    np.testing.assert_array_equal(reply.tensor, [0.5, -1.0])
    error = protocol.decode(protocol.encode(ErrorMessage(ErrorCode.UNKNOWN_MODEL, "no model 'x' ✗")))
    assert error.code == ErrorCode.UNKNOWN_MODEL
    assert error.message == "no model 'x' ✗"


def test_truncated_frame():
    frame = protocol.encode(ActivationPayload("m", np.ones((2, 2), dtype=np.float32), request_id=1))
    for cut in (3, protocol.HEADER.size, len(frame) - 1):
        with pytest.raises(ProtocolError):
            protocol.decode(frame[:cut])


def test_bad_magic():
    frame = bytearray(protocol.encode(Hello("m")))
    frame[:4] = b"XXXX"
    with pytest.raises(ProtocolError, match="magic"):
        protocol.decode(bytes(frame))


def test_unsupported_version():
    frame = bytearray(protocol.encode(Hello("m")))
    frame[4] = 2
    with pytest.raises(ProtocolError, match="version"):
        protocol.decode(bytes(frame))


def test_unknown_message_type():
    frame = bytearray(protocol.encode(Hello("m")))
    frame[5] = 99
    with pytest.raises(ProtocolError, match="unknown message type"):
        protocol.decode(bytes(frame))


def test_trailing_bytes_are_rejected():
    with pytest.raises(ProtocolError, match="trailing"):
        protocol.decode(protocol.encode(Hello("m")) + b"\x00")


def test_payload_length_must_match_contents():
    frame = bytearray(protocol.encode(Hello("m")) + b"\x00")
    struct.pack_into("<Q", frame, 6, len(frame) - protocol.HEADER.size)
    with pytest.raises(ProtocolError, match="does not match"):
        protocol.decode(bytes(frame))


def test_frame_stream():
    msgs = [Hello("a"), ActivationPayload("a", np.zeros(3, dtype=np.float32), request_id=9), Hello("b", (1, 2))]
    stream = b"".join(protocol.encode(m) for m in msgs)
    decoded = protocol.decode_all(stream)
    assert [type(m) for m in decoded] == [Hello, ActivationPayload, Hello]
    assert decoded[2].input_shape == (1, 2)


def _activation_frame_with_dims(dims, data=b""):
    payload = (struct.pack("<H", 1) + b"m" + struct.pack("<B", len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
               + data + struct.pack("<ffQ", 0.0, 0.0, 1))
    return protocol.HEADER.pack(b"SPLT", 1, MsgType.ACTIVATION_REQUEST, len(payload)) + payload


@pytest.mark.parametrize("dims", [(65536,) * 4, (2**32 - 1, 2**32 - 1), (3, 2**31)])
def test_tensor_dims_beyond_the_payload_are_rejected(dims):
    with pytest.raises(ProtocolError, match="needs"):
        protocol.decode(_activation_frame_with_dims(dims))


def test_tensor_dims_one_element_short():
    frame = _activation_frame_with_dims((2, 3), data=b"\x00" * 20)
    with pytest.raises(ProtocolError):
        protocol.decode(frame)


def _random_messages(rng):
    for _ in range(25):
        rank = int(rng.integers(1, 4))
        shape = tuple(int(d) for d in rng.integers(0, 5, size=rank))
        tensor = rng.standard_normal(shape).astype(np.float32)
        model_id = "".join(rng.choice(list("abcxyz-_019é✓"), size=int(rng.integers(0, 12))))
        sigma = None if rng.random() < 0.3 else float(np.float32(rng.random()))
        dfil = None if rng.random() < 0.3 else float(np.float32(rng.random() * 100))
        request_id = int(rng.integers(0, 2**63))
        yield Hello(model_id, shape if rng.random() < 0.5 else None)
        yield ActivationPayload(model_id, tensor, sigma, dfil, request_id)
        yield PredictionResponse(request_id, tensor)
        yield ErrorMessage(int(rng.integers(0, 2**16)), model_id * 3)


def test_random_messages_of_every_kind_survive_the_wire():
    rng = np.random.default_rng(7)
    for msg in _random_messages(rng):
        decoded = protocol.decode(protocol.encode(msg))
        assert type(decoded) is type(msg)
        if isinstance(msg, Hello):
            assert (decoded.model_id, decoded.input_shape) == (msg.model_id, msg.input_shape)
        elif isinstance(msg, ActivationPayload):
            assert decoded.model_id == msg.model_id
            np.testing.assert_array_equal(decoded.tensor, msg.tensor)
            assert decoded.tensor.shape == msg.tensor.shape
            assert (decoded.sigma, decoded.achieved_dfil, decoded.request_id) == \
                (msg.sigma, msg.achieved_dfil, msg.request_id)
        elif isinstance(msg, PredictionResponse):
            assert decoded.request_id == msg.request_id
            np.testing.assert_array_equal(decoded.tensor, msg.tensor)
        else:
            assert (decoded.code, decoded.message) == (msg.code, msg.message)


def test_damaged_frames_only_raise_protocol_errors():
    rng = np.random.default_rng(11)
    frames = [protocol.encode(msg) for msg in _random_messages(rng)]
    for frame in frames:
        for cut in range(len(frame)):
            with pytest.raises(ProtocolError):
                protocol.decode(frame[:cut])
        damaged = bytearray(frame)
        # keep the header intact so the payload parser sees the garbage
        for i in rng.integers(protocol.HEADER.size, len(frame), size=4):
            damaged[i] = int(rng.integers(0, 256))
        try:
            protocol.decode(bytes(damaged))
        except ProtocolError:
            pass
    for _ in range(200):
        garbage = rng.integers(0, 256, size=int(rng.integers(0, 64)), dtype=np.uint8).tobytes()
        with pytest.raises(ProtocolError):
            protocol.decode(garbage)
        header = protocol.HEADER.pack(b"SPLT", 1, int(rng.integers(1, 5)), len(garbage))
        try:
            protocol.decode(header + garbage)
        except ProtocolError:
            pass

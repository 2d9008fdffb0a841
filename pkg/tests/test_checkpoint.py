import struct

import numpy as np
import pytest

from refil.autodiff import checkpoint, forward
from refil.errors import CheckpointError


def test_saved_model_reloads_with_identical_outputs(small_cnn, rng, tmp_path):
    model = small_cnn.astype(np.float32)
    path = tmp_path / "cnn.rflm"
    checkpoint.save(model, path)
    loaded = checkpoint.load(path)
    assert loaded.input_shape == model.input_shape
    assert loaded.output_shape == model.output_shape
    assert [type(layer) for layer in loaded.layers] == [type(layer) for layer in model.layers]
    x = rng.standard_normal(model.input_shape).astype(np.float32)
    np.testing.assert_array_equal(forward(loaded, x), forward(model, x))


def test_integer_input_flag_survives(embedding_model):
    loaded = checkpoint.loads(checkpoint.dumps(embedding_model))
    assert loaded.integer_input
    assert loaded.embedding_prefix_length() == 1


def test_bad_magic():
    with pytest.raises(CheckpointError) as excinfo:
        checkpoint.loads(b"NOPE" + b"\x00" * 16)
    assert excinfo.value.offset == 0


def test_unsupported_version(linear_model):
    buf = bytearray(checkpoint.dumps(linear_model))
    buf[4] = 99
    with pytest.raises(CheckpointError) as excinfo:
        checkpoint.loads(bytes(buf))
    assert excinfo.value.offset == 4


def test_truncated_checkpoint(linear_model):
    buf = checkpoint.dumps(linear_model)
    with pytest.raises(CheckpointError):
        checkpoint.loads(buf[:-3])


def test_trailing_bytes(linear_model):
    with pytest.raises(CheckpointError):
        checkpoint.loads(checkpoint.dumps(linear_model) + b"\x00")


def test_unknown_layer_tag(linear_model):
    buf = bytearray(checkpoint.dumps(linear_model))
    # header: magic(4) version(1) count(4) rank(1) dims(4) integer flag(1)
    tag_offset = 4 + 1 + 4 + 1 + 4 + 1
    assert buf[tag_offset] == 1
    buf[tag_offset] = 200
    with pytest.raises(CheckpointError) as excinfo:
        checkpoint.loads(bytes(buf))
    assert excinfo.value.offset == tag_offset


def test_input_header_is_stored(linear_model):
    buf = checkpoint.dumps(linear_model)
    (rank,) = struct.unpack_from("<B", buf, 9)
    (dim,) = struct.unpack_from("<I", buf, 10)
    assert (rank, dim) == (1, 2)


def _first_tensor_offset(buf):
    # tag(1) attr count(1) attrs(4 each) tensor count(1)
    tag_offset = 4 + 1 + 4 + 1 + 4 + 1
    (n_attrs,) = struct.unpack_from("<B", buf, tag_offset + 1)
    return tag_offset + 2 + 4 * n_attrs + 1


@pytest.mark.parametrize("dims", [(65536,) * 4, (2**32 - 1, 2**32 - 1)])
def test_oversized_tensor_dims_are_rejected(linear_model, dims):
    buf = bytearray(checkpoint.dumps(linear_model))
    offset = _first_tensor_offset(buf)
    assert buf[offset] == 2
    head = struct.pack("<B", len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
    patched = bytes(buf[:offset]) + head + bytes(buf[offset + 1 + 4 * 2:])
    with pytest.raises(CheckpointError) as excinfo:
        checkpoint.loads(patched)
    assert excinfo.value.offset == offset + len(head)


def test_input_header_that_does_not_fit_the_layers(linear_model):
    buf = bytearray(checkpoint.dumps(linear_model))
    struct.pack_into("<I", buf, 10, 3)
    with pytest.raises(CheckpointError):
        checkpoint.loads(bytes(buf))

# refil/autodiff/checkpoint.py
"""RFLM model checkpoints.

Layout (all integers little-endian):

    b"RFLM" | version u8 | layer count u32
    input: rank u8 | dims u32 * rank | integer-input flag u8
    layer*: kind tag u8
            attr count u8 | attrs i32 * n
            tensor count u8 | (rank u8 | dims u32 * rank | float32 data) * n
            branch count u8 | (layer count u32 | layer*) * n
"""
import math
import struct
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from refil.autodiff.layers import LAYER_TYPES, Layer
from refil.autodiff.model import Model
from refil.errors import CheckpointError, ConfigError, ShapeMismatchError

MAGIC = b"RFLM"
VERSION = 1


def _pack_tensor(arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<B", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape)
    return head + data.tobytes()


def _pack_layers(layers: List[Layer]) -> bytes:
    out = [struct.pack("<I", len(layers))]
    for layer in layers:
        attrs = layer.attrs()
        tensors = layer.tensors()
        branches = layer.branches()
        out.append(struct.pack("<B", layer.tag))
        out.append(struct.pack("<B", len(attrs)) + struct.pack(f"<{len(attrs)}i", *attrs))
        out.append(struct.pack("<B", len(tensors)))
        out.extend(_pack_tensor(t) for t in tensors)
        out.append(struct.pack("<B", len(branches)))
        out.extend(_pack_layers(b) for b in branches)
    return b"".join(out)


def dumps(model: Model) -> bytes:
    shape = model.input_shape
    header = (MAGIC + struct.pack("<B", VERSION))
    body = _pack_layers(model.layers)
    # layer count leads the body; the input header follows it
    count, rest = body[:4], body[4:]
    input_header = (struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
                    + struct.pack("<B", int(model.integer_input)))
    return header + count + input_header + rest


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, fmt: str) -> Tuple:
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise CheckpointError(self.pos, f"truncated: need {size} bytes, {len(self.buf) - self.pos} left")
        values = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return values

    def tensor(self) -> np.ndarray:
        (rank,) = self.take("<B")
        dims = self.take(f"<{rank}I")
        count = math.prod(dims)
        if count * 4 > len(self.buf) - self.pos:
            raise CheckpointError(self.pos, f"tensor of shape {dims} needs {count * 4} bytes, "
                                            f"{len(self.buf) - self.pos} left")
        start = self.pos
        self.pos += count * 4
        return np.frombuffer(self.buf, dtype="<f4", count=count, offset=start).astype(np.float32).reshape(dims)

    def layers(self, count: int) -> List[Layer]:
        result = []
        for _ in range(count):
            offset = self.pos
            (tag,) = self.take("<B")
            if tag not in LAYER_TYPES:
                raise CheckpointError(offset, f"unknown layer kind tag {tag}")
            (n_attrs,) = self.take("<B")
            attrs = list(self.take(f"<{n_attrs}i"))
            (n_tensors,) = self.take("<B")
            tensors = [self.tensor() for _ in range(n_tensors)]
            (n_branches,) = self.take("<B")
            branches = []
            for _ in range(n_branches):
                (n,) = self.take("<I")
                branches.append(self.layers(n))
            try:
                result.append(LAYER_TYPES[tag].from_parts(attrs, tensors, branches))
            except (IndexError, ValueError, ShapeMismatchError) as exc:
                raise CheckpointError(offset, f"bad parameters for layer tag {tag}: {exc}") from exc
        return result


def loads(buf: bytes) -> Model:
    reader = _Reader(buf)
    (magic,) = reader.take("<4s")
    if magic != MAGIC:
        raise CheckpointError(0, f"bad magic {magic!r}")
    (version,) = reader.take("<B")
    if version != VERSION:
        raise CheckpointError(4, f"unsupported version {version}")
    (count,) = reader.take("<I")
    (rank,) = reader.take("<B")
    shape = reader.take(f"<{rank}I")
    (integer_input,) = reader.take("<B")
    layers = reader.layers(count)
    if reader.pos != len(buf):
        raise CheckpointError(reader.pos, f"{len(buf) - reader.pos} trailing bytes")
    try:
        return Model(layers, shape, integer_input=bool(integer_input))
    except (ShapeMismatchError, ConfigError) as exc:
        raise CheckpointError(5, f"layers do not fit the input header: {exc}") from exc


def save(model: Model, path: Union[str, Path]) -> None:
    Path(path).write_bytes(dumps(model))


def load(path: Union[str, Path]) -> Model:
    return loads(Path(path).read_bytes())

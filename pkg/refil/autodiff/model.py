# refil/autodiff/model.py
from __future__ import annotations

from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from refil.autodiff.layers import (
    FLOAT, Layer, Shape, sequence_backward, sequence_forward, sequence_jvp,
    sequence_output_shape, sequence_vjp,
)
from refil.errors import InvalidInputError, ShapeMismatchError


class Model:
    """Ordered layer list with a fixed single-example input shape."""

    def __init__(self, layers: Sequence[Layer], input_shape: Sequence[int], integer_input: Optional[bool] = None):
        self.layers: List[Layer] = list(layers)
        self.input_shape: Shape = tuple(int(d) for d in input_shape)
        if integer_input is None:
            integer_input = bool(self.layers) and not self.layers[0].differentiable
        self.integer_input = integer_input
        self.output_shape: Shape = sequence_output_shape(self.layers, self.input_shape)

    # -- structure ----------------------------------------------------------
    @property
    def dtype(self):
        for layer in self.layers:
            for value in layer.tensors():
                if np.issubdtype(value.dtype, np.floating):
                    return value.dtype
        return np.dtype(FLOAT)

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def output_dim(self) -> int:
        return int(np.prod(self.output_shape))

    def embedding_prefix_length(self) -> int:
        """Number of leading layers that consume integer indices."""
        n = 0
        for layer in self.layers:
            if layer.differentiable:
                break
            n += 1
        return n

    def slice(self, start: int, stop: Optional[int] = None) -> "Model":
        """Sub-model over ``layers[start:stop]`` sharing parameter arrays."""
        stop = len(self.layers) if stop is None else stop
        shape = sequence_output_shape(self.layers[:start], self.input_shape)
        return Model(self.layers[start:stop], shape, integer_input=self.integer_input if start == 0 else None)

    def astype(self, dtype) -> "Model":
        return Model([layer.astype(dtype) for layer in self.layers], self.input_shape, self.integer_input)

    def parameters(self) -> Dict[str, np.ndarray]:
        named: Dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            named.update(layer.named_params(f"{i}."))
        return named

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def __repr__(self) -> str:
        return f"Model(input_shape={self.input_shape}, layers={self.layers})"

    # -- batched evaluation -------------------------------------------------
    def check_input(self, x: np.ndarray, batched: bool = False) -> np.ndarray:
        shape = tuple(x.shape[1:]) if batched else tuple(x.shape)
        if shape != self.input_shape:
            name = self.layers[0].name if self.layers else "Identity"
            raise ShapeMismatchError(0, name, self.input_shape, shape)
        if self.integer_input:
            if not np.all(np.equal(np.mod(x, 1), 0)):
                raise InvalidInputError(self.layers[0].name, "expected integer indices")
            return np.asarray(x, dtype=np.int64)
        return np.asarray(x, dtype=self.dtype)

    def forward_batch(self, xb: np.ndarray) -> Tuple[np.ndarray, List[Any]]:
        xb = self.check_input(xb, batched=True)
        return sequence_forward(self.layers, xb)

    def backward_batch(self, caches: List[Any], gy: np.ndarray,
                       need_input_grad: bool = False) -> Tuple[Optional[np.ndarray], Dict[str, np.ndarray]]:
        return sequence_backward(self.layers, caches, gy, need_input_grad=need_input_grad)

    def vjp_batch(self, caches: List[Any], ub: np.ndarray) -> np.ndarray:
        return sequence_vjp(self.layers, caches, ub)

    def jvp_batch(self, caches: List[Any], vb: np.ndarray) -> np.ndarray:
        return sequence_jvp(self.layers, caches, vb)

    def predict(self, xb: np.ndarray) -> np.ndarray:
        return self.forward_batch(xb)[0]


def continuous_view(model: Model, x: np.ndarray) -> Tuple[Model, np.ndarray]:
    """Strip a leading embedding prefix.

    Returns the differentiable tail and the input it sees. For models without
    an embedding prefix this is ``(model, x)`` unchanged.
    """
    n = model.embedding_prefix_length()
    if n == 0:
        return model, model.check_input(np.asarray(x))
    prefix = model.slice(0, n)
    embedded = prefix.predict(prefix.check_input(np.asarray(x))[None])[0]
    return model.slice(n), embedded

"""Layer set of the differentiation core.

Every layer works on a leading batch axis. ``forward`` returns the output and
a cache; ``vjp``/``jvp`` reuse that cache to push cotangents/tangents through
the layer. When the cache comes from a single example (batch of one) the
cotangent/tangent batch may be any size: every piece of cached state
broadcasts over it, which is what the Jacobian sweeps rely on.
"""
from __future__ import annotations

from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from refil.errors import InvalidInputError, ShapeMismatchError

Shape = Tuple[int, ...]

FLOAT = np.float32


class Layer:
    """Base layer. Subclasses set ``name`` and ``tag`` and override the hooks."""

    name = "Layer"
    tag = 0
    differentiable = True

    # -- shapes -----------------------------------------------------------
    def output_shape(self, input_shape: Shape, index: int = -1) -> Shape:
        return tuple(input_shape)

    def _reject(self, index: int, expected: Sequence[int], got: Sequence[int]):
        raise ShapeMismatchError(index, self.name, expected, got)

    # -- evaluation -------------------------------------------------------
    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def vjp(self, cache: Any, gy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jvp(self, cache: Any, vx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def param_grads(self, cache: Any, gy: np.ndarray) -> Dict[str, np.ndarray]:
        return {}

    # -- parameters -------------------------------------------------------
    def params(self) -> Dict[str, np.ndarray]:
        """Trainable arrays, updated in place by optimizers."""
        return {}

    def buffers(self) -> Dict[str, np.ndarray]:
        """Saved but frozen arrays."""
        return {}

    def branches(self) -> List[List["Layer"]]:
        return []

    def attrs(self) -> List[int]:
        return []

    def tensors(self) -> List[np.ndarray]:
        """Arrays in checkpoint order."""
        return list(self.params().values()) + list(self.buffers().values())

    @classmethod
    def from_parts(cls, attrs: List[int], tensors: List[np.ndarray], branches: List[List["Layer"]]) -> "Layer":
        return cls()

    def astype(self, dtype) -> "Layer":
        return type(self).from_parts(
            self.attrs(),
            [t.astype(dtype) for t in self.tensors()],
            [[layer.astype(dtype) for layer in branch] for branch in self.branches()],
        )

    def named_params(self, prefix: str) -> Dict[str, np.ndarray]:
        named = {f"{prefix}{key}": value for key, value in self.params().items()}
        for k, branch in enumerate(self.branches()):
            for j, layer in enumerate(branch):
                named.update(layer.named_params(f"{prefix}branch{k}.{j}."))
        return named

    def __repr__(self) -> str:
        return f"{self.name}()"


def _fan_in_uniform(rng: np.random.Generator, shape: Shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(FLOAT)


class Dense(Layer):
    name = "Dense"
    tag = 1

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = weight
        self.bias = bias
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ShapeMismatchError(-1, self.name, (weight.shape[0],), bias.shape)

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "Dense":
        return cls(_fan_in_uniform(rng, (n_out, n_in), n_in), _fan_in_uniform(rng, (n_out,), n_in))

    def output_shape(self, input_shape, index=-1):
        if tuple(input_shape) != (self.weight.shape[1],):
            self._reject(index, (self.weight.shape[1],), input_shape)
        return (self.weight.shape[0],)

    def forward(self, x):
        return x @ self.weight.T + self.bias, x

    def vjp(self, cache, gy):
        return gy @ self.weight

    def jvp(self, cache, vx):
        return vx @ self.weight.T

    def param_grads(self, cache, gy):
        return {"weight": gy.T @ cache, "bias": gy.sum(axis=0)}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    @classmethod
    def from_parts(cls, attrs, tensors, branches):
        return cls(tensors[0], tensors[1])

    def __repr__(self):
        return f"Dense({self.weight.shape[1]}->{self.weight.shape[0]})"


def _conv_out(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


class Conv2d(Layer):
    name = "Conv2d"
    tag = 2

    def __init__(self, weight: np.ndarray, bias: np.ndarray, stride: int = 1, padding: int = 0):
        self.weight = weight
        self.bias = bias
        self.stride = int(stride)
        self.padding = int(padding)
        if weight.ndim != 4 or bias.shape != (weight.shape[0],):
            raise ShapeMismatchError(-1, self.name, (weight.shape[0],), bias.shape)

    @classmethod
    def init(cls, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
             stride: int = 1, padding: int = 0) -> "Conv2d":
        fan_in = c_in * kernel * kernel
        return cls(
            _fan_in_uniform(rng, (c_out, c_in, kernel, kernel), fan_in),
            _fan_in_uniform(rng, (c_out,), fan_in),
            stride=stride,
            padding=padding,
        )

    @property
    def kernel(self) -> Tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    def output_shape(self, input_shape, index=-1):
        o, i, kh, kw = self.weight.shape
        if len(input_shape) != 3 or input_shape[0] != i:
            self._reject(index, (i, "H", "W"), input_shape)
        ho = _conv_out(input_shape[1], kh, self.stride, self.padding)
        wo = _conv_out(input_shape[2], kw, self.stride, self.padding)
        if ho < 1 or wo < 1:
            self._reject(index, (i, kh, kw), input_shape)
        return (o, ho, wo)

    def _cols(self, x: np.ndarray) -> Tuple[np.ndarray, Shape]:
        kh, kw = self.kernel
        p = self.padding
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::self.stride, ::self.stride]
        b, c, ho, wo = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
        return cols, (b, ho, wo)

    def _apply(self, x: np.ndarray, bias: bool) -> Tuple[np.ndarray, np.ndarray]:
        cols, (b, ho, wo) = self._cols(x)
        out = cols @ self.weight.reshape(self.weight.shape[0], -1).T
        if bias:
            out = out + self.bias
        y = out.reshape(b, ho, wo, -1).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(y), cols

    def forward(self, x):
        y, cols = self._apply(x, bias=True)
        return y, (cols, x.shape[1:])

    def jvp(self, cache, vx):
        return self._apply(vx, bias=False)[0]

    def vjp(self, cache, gy):
        _, in_shape = cache
        c, h, w = in_shape
        kh, kw = self.kernel
        s, p = self.stride, self.padding
        t, o, ho, wo = gy.shape
        gmat = gy.transpose(0, 2, 3, 1).reshape(-1, o) @ self.weight.reshape(o, -1)
        g = gmat.reshape(t, ho, wo, c, kh, kw)
        gx = np.zeros((t, c, h + 2 * p, w + 2 * p), dtype=gy.dtype)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + s * ho:s, j:j + s * wo:s] += g[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p:
            gx = gx[:, :, p:-p, p:-p]
        return np.ascontiguousarray(gx)

    def param_grads(self, cache, gy):
        cols, _ = cache
        o = gy.shape[1]
        gmat = gy.transpose(0, 2, 3, 1).reshape(-1, o)
        return {
            "weight": (gmat.T @ cols).reshape(self.weight.shape),
            "bias": gmat.sum(axis=0),
        }

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def attrs(self):
        return [self.stride, self.padding]

    @classmethod
    def from_parts(cls, attrs, tensors, branches):
        return cls(tensors[0], tensors[1], stride=attrs[0], padding=attrs[1])

    def __repr__(self):
        o, i, kh, kw = self.weight.shape
        return f"Conv2d({i}->{o}, {kh}x{kw}, stride={self.stride}, padding={self.padding})"


class Relu(Layer):
    name = "Relu"
    tag = 3

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0).astype(x.dtype, copy=False), mask

    def vjp(self, cache, gy):
        return gy * cache

    def jvp(self, cache, vx):
        return vx * cache


class AvgPool(Layer):
    name = "AvgPool"
    tag = 4

    def __init__(self, window: int = 2):
        self.window = int(window)

    def output_shape(self, input_shape, index=-1):
        k = self.window
        if len(input_shape) != 3 or input_shape[1] % k or input_shape[2] % k:
            self._reject(index, ("C", f"H%{k}==0", f"W%{k}==0"), input_shape)
        return (input_shape[0], input_shape[1] // k, input_shape[2] // k)

    def _pool(self, x):
        b, c, h, w = x.shape
        k = self.window
        return x.reshape(b, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def forward(self, x):
        return self._pool(x), None

    def jvp(self, cache, vx):
        return self._pool(vx)

    def vjp(self, cache, gy):
        k = self.window
        return np.repeat(np.repeat(gy, k, axis=2), k, axis=3) / (k * k)

    def attrs(self):
        return [self.window]

    @classmethod
    def from_parts(cls, attrs, tensors, branches):
        return cls(attrs[0])

    def __repr__(self):
        return f"AvgPool({self.window})"


class Flatten(Layer):
    name = "Flatten"
    tag = 5

    def output_shape(self, input_shape, index=-1):
        return (int(np.prod(input_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape[1:]

    def jvp(self, cache, vx):
        return vx.reshape(vx.shape[0], -1)

    def vjp(self, cache, gy):
        return gy.reshape((gy.shape[0],) + tuple(cache))


class EmbeddingLookup(Layer):
    """Reads one integer field of the input and returns that row of ``table``."""

    name = "EmbeddingLookup"
    tag = 6
    differentiable = False

    def __init__(self, table: np.ndarray, field: int = 0):
        self.table = table
        self.field = int(field)

    @classmethod
    def init(cls, rows: int, dim: int, rng: np.random.Generator, field: int = 0) -> "EmbeddingLookup":
        return cls(rng.normal(0.0, 1.0, size=(rows, dim)).astype(FLOAT), field=field)

    def output_shape(self, input_shape, index=-1):
        if len(input_shape) != 1 or input_shape[0] <= self.field:
            self._reject(index, (f">{self.field}",), input_shape)
        return (self.table.shape[1],)

    def forward(self, x):
        idx = np.asarray(x[:, self.field]).astype(np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.table.shape[0]):
            raise InvalidInputError(
                self.name, f"index out of range [0, {self.table.shape[0]}) in field {self.field}"
            )
        return self.table[idx], idx

    def vjp(self, cache, gy):
        raise InvalidInputError(self.name, "integer indices have no derivative")

    jvp = vjp

    def param_grads(self, cache, gy):
        grad = np.zeros_like(self.table)
        np.add.at(grad, cache, gy)
        return {"table": grad}

    def params(self):
        return {"table": self.table}

    def attrs(self):
        return [self.field]

    @classmethod
    def from_parts(cls, attrs, tensors, branches):
        return cls(tensors[0], field=attrs[0])

    def __repr__(self):
        return f"EmbeddingLookup({self.table.shape[0]}x{self.table.shape[1]}, field={self.field})"


class Standardize(Layer):
    """Per-channel (rank-3 input) or per-feature (rank-1 input) affine normalization."""

    name = "Standardize"
    tag = 8

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=FLOAT) if not isinstance(mean, np.ndarray) else mean
        self.std = np.asarray(std, dtype=FLOAT) if not isinstance(std, np.ndarray) else std

    def output_shape(self, input_shape, index=-1):
        if not input_shape or input_shape[0] != self.mean.shape[0]:
            self._reject(index, (self.mean.shape[0],), input_shape)
        return tuple(input_shape)

    def _broadcast(self, a: np.ndarray, ndim: int) -> np.ndarray:
        return a.reshape((-1,) + (1,) * (ndim - 2))

    def forward(self, x):
        mean = self._broadcast(self.mean, x.ndim)
        std = self._broadcast(self.std, x.ndim)
        return (x - mean) / std, None

    def jvp(self, cache, vx):
        return vx / self._broadcast(self.std, vx.ndim)

    vjp = jvp

    def buffers(self):
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_parts(cls, attrs, tensors, branches):
        return cls(tensors[0], tensors[1])

    def __repr__(self):
        return f"Standardize({self.mean.shape[0]})"


class Concat(Layer):
    """Applies each branch to the same input and concatenates along ``axis``."""

    name = "Concat"
    tag = 7

    def __init__(self, branches: List[List[Layer]], axis: int = 0):
        self._branches = [list(b) for b in branches]
        self.axis = int(axis)

    @property
    def differentiable(self):
        return all(sequence_differentiable(b) for b in self._branches)

    def branches(self):
        return self._branches

    def output_shape(self, input_shape, index=-1):
        outs = [sequence_output_shape(b, input_shape) for b in self._branches]
        if not outs:
            self._reject(index, ("at least one branch",), input_shape)
        ref = list(outs[0])
        total = 0
        for out in outs:
            rest = [d for k, d in enumerate(out) if k != self.axis]
            if len(out) != len(ref) or rest != [d for k, d in enumerate(ref) if k != self.axis]:
                self._reject(index, tuple(ref), out)
            total += out[self.axis]
        ref[self.axis] = total
        return tuple(ref)

    def forward(self, x):
        results = [sequence_forward(b, x) for b in self._branches]
        sizes = [y.shape[self.axis + 1] for y, _ in results]
        y = np.concatenate([y for y, _ in results], axis=self.axis + 1)
        return y, ([c for _, c in results], sizes)

    def _split(self, g, sizes):
        return np.split(g, np.cumsum(sizes)[:-1], axis=self.axis + 1)

    def vjp(self, cache, gy):
        caches, sizes = cache
        parts = self._split(gy, sizes)
        return sum(sequence_vjp(b, c, g) for b, c, g in zip(self._branches, caches, parts))

    def jvp(self, cache, vx):
        caches, _ = cache
        return np.concatenate(
            [sequence_jvp(b, c, vx) for b, c in zip(self._branches, caches)], axis=self.axis + 1
        )

    def param_grads(self, cache, gy):
        caches, sizes = cache
        grads: Dict[str, np.ndarray] = {}
        for k, (b, c, g) in enumerate(zip(self._branches, caches, self._split(gy, sizes))):
            _, bgrads = sequence_backward(b, c, g, need_input_grad=False)
            grads.update({f"branch{k}.{key}": v for key, v in bgrads.items()})
        return grads

    def attrs(self):
        return [self.axis]

    @classmethod
    def from_parts(cls, attrs, tensors, branches):
        return cls(branches, axis=attrs[0])

    def __repr__(self):
        return f"Concat(axis={self.axis}, branches={self._branches})"


class Residual(Layer):
    """y = x + branch(x)."""

    name = "Residual"
    tag = 9

    def __init__(self, branch: List[Layer]):
        self.branch = list(branch)

    def branches(self):
        return [self.branch]

    def output_shape(self, input_shape, index=-1):
        out = sequence_output_shape(self.branch, input_shape)
        if tuple(out) != tuple(input_shape):
            self._reject(index, input_shape, out)
        return tuple(input_shape)

    def forward(self, x):
        y, caches = sequence_forward(self.branch, x)
        return x + y, caches

    def vjp(self, cache, gy):
        return gy + sequence_vjp(self.branch, cache, gy)

    def jvp(self, cache, vx):
        return vx + sequence_jvp(self.branch, cache, vx)

    def param_grads(self, cache, gy):
        _, grads = sequence_backward(self.branch, cache, gy, need_input_grad=False)
        return {f"branch0.{key}": v for key, v in grads.items()}

    @classmethod
    def from_parts(cls, attrs, tensors, branches):
        return cls(branches[0])

    def __repr__(self):
        return f"Residual({self.branch})"


LAYER_TYPES = {cls.tag: cls for cls in (Dense, Conv2d, Relu, AvgPool, Flatten, EmbeddingLookup,
                                        Concat, Standardize, Residual)}


# -- layer sequences ------------------------------------------------------

def sequence_differentiable(layers: Sequence[Layer]) -> bool:
    return all(layer.differentiable for layer in layers)


def sequence_output_shape(layers: Sequence[Layer], input_shape: Shape) -> Shape:
    shape = tuple(input_shape)
    for i, layer in enumerate(layers):
        shape = layer.output_shape(shape, i)
    return shape


def sequence_forward(layers: Sequence[Layer], x: np.ndarray) -> Tuple[np.ndarray, List[Any]]:
    caches = []
    for layer in layers:
        x, cache = layer.forward(x)
        caches.append(cache)
    return x, caches


def sequence_vjp(layers: Sequence[Layer], caches: Sequence[Any], gy: np.ndarray) -> np.ndarray:
    for layer, cache in zip(reversed(layers), reversed(caches)):
        gy = layer.vjp(cache, gy)
    return gy


def sequence_jvp(layers: Sequence[Layer], caches: Sequence[Any], vx: np.ndarray) -> np.ndarray:
    for layer, cache in zip(layers, caches):
        vx = layer.jvp(cache, vx)
    return vx


def sequence_backward(layers: Sequence[Layer], caches: Sequence[Any], gy: np.ndarray,
                      need_input_grad: bool = True) -> Tuple[Optional[np.ndarray], Dict[str, np.ndarray]]:
    """Reverse pass collecting parameter gradients keyed ``"<index>.<name>"``."""
    grads: Dict[str, np.ndarray] = {}
    n = len(layers)
    for i in range(n - 1, -1, -1):
        layer, cache = layers[i], caches[i]
        for key, value in layer.param_grads(cache, gy).items():
            grads[f"{i}.{key}"] = value
        if i == 0 and not need_input_grad:
            return None, grads
        if not layer.differentiable:
            # everything upstream of an index-consuming layer is integer data
            if any(layers[j].params() or layers[j].branches() for j in range(i)):
                raise InvalidInputError(layer.name, "trainable layers before an embedding lookup")
            return None, grads
        gy = layer.vjp(cache, gy)
    return gy, grads

# refil/autodiff/jacobian.py
"""Per-example forward, VJP/JVP and Jacobian-trace computations.

All functions take a single example (no batch axis). Sweeps over basis or
probe vectors are batched internally in chunks of ``SWEEP_CHUNK`` and reduced
in a fixed order, so results do not depend on the chunk size beyond rounding.
"""
import logging
from typing import Any, List, Tuple

import numpy as np

from refil.autodiff.model import Model, continuous_view
from refil.config import JACOBIAN_CAP, SWEEP_CHUNK
from refil.errors import ConfigError, JacobianTooLargeError, ShapeMismatchError

logger = logging.getLogger("refil.autodiff")


def _linearize(model: Model, x: np.ndarray) -> Tuple[Model, np.ndarray, List[Any], np.ndarray]:
    tail, xc = continuous_view(model, x)
    y, caches = tail.forward_batch(xc[None])
    return tail, xc, caches, y[0]


def _check_shape(name: str, expected, got) -> None:
    if tuple(expected) != tuple(got):
        raise ShapeMismatchError(-1, name, expected, got)


def forward(model: Model, x: np.ndarray) -> np.ndarray:
    xb = model.check_input(np.asarray(x))[None]
    return model.forward_batch(xb)[0][0]


def vjp(model: Model, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """u^T J, shaped like the (continuous) input."""
    tail, xc, caches, _ = _linearize(model, x)
    u = np.asarray(u, dtype=tail.dtype)
    _check_shape("cotangent", tail.output_shape, u.shape)
    return tail.vjp_batch(caches, u[None])[0]


def jvp(model: Model, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """J v, shaped like the output."""
    tail, xc, caches, _ = _linearize(model, x)
    v = np.asarray(v, dtype=tail.dtype)
    _check_shape("tangent", tail.input_shape, v.shape)
    return tail.jvp_batch(caches, v[None])[0]


def _basis_chunks(n: int, shape, dtype, chunk: int):
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        basis = np.zeros((stop - start, n), dtype=dtype)
        basis[np.arange(stop - start), np.arange(start, stop)] = 1
        yield start, stop, basis.reshape((stop - start,) + tuple(shape))


def full_jacobian(model: Model, x: np.ndarray, cap: int = JACOBIAN_CAP, chunk: int = SWEEP_CHUNK) -> np.ndarray:
    """Materialized m x d Jacobian; row i is the VJP with e_i."""
    tail, xc, caches, _ = _linearize(model, x)
    m, d = tail.output_dim, tail.input_dim
    if m * d > cap:
        raise JacobianTooLargeError(m, d, cap)
    jac = np.empty((m, d), dtype=tail.dtype)
    for start, stop, basis in _basis_chunks(m, tail.output_shape, tail.dtype, chunk):
        jac[start:stop] = tail.vjp_batch(caches, basis).reshape(stop - start, d)
    return jac


def trace_jtj_exact(model: Model, x: np.ndarray, chunk: int = SWEEP_CHUNK) -> float:
    """||J||_F^2 with min(d, m) sweeps, accumulated in float64."""
    tail, xc, caches, _ = _linearize(model, x)
    m, d = tail.output_dim, tail.input_dim
    total = 0.0
    if d <= m:
        for _, _, basis in _basis_chunks(d, tail.input_shape, tail.dtype, chunk):
            cols = tail.jvp_batch(caches, basis)
            total += float(np.sum(np.square(cols.astype(np.float64))))
    else:
        for _, _, basis in _basis_chunks(m, tail.output_shape, tail.dtype, chunk):
            rows = tail.vjp_batch(caches, basis)
            total += float(np.sum(np.square(rows.astype(np.float64))))
    return total


def rademacher(rng: np.random.Generator, shape, dtype=np.float32) -> np.ndarray:
    return (rng.integers(0, 2, size=shape) * 2 - 1).astype(dtype)


def trace_jtj_hutchinson(model: Model, x: np.ndarray, k: int, rng: np.random.Generator,
                         chunk: int = SWEEP_CHUNK) -> float:
    """(1/k) sum_j ||J v_j||^2 with Rademacher probes v_j."""
    if k < 1:
        raise ConfigError(f"Hutchinson probe count must be >= 1, got {k}")
    tail, xc, caches, _ = _linearize(model, x)
    total = 0.0
    for start in range(0, k, chunk):
        n = min(chunk, k - start)
        probes = rademacher(rng, (n,) + tail.input_shape, tail.dtype)
        out = tail.jvp_batch(caches, probes)
        total += float(np.sum(np.square(out.astype(np.float64))))
    return total / k

# refil/networks/snr.py
"""SNR loss trace(J^T J) / (z^T z) with a parameter-differentiable trace estimate.

The trace is estimated from central differences of the client map along
Rademacher probes, ||(f(x + eps v) - f(x - eps v)) / (2 eps)||^2, so its
gradient with respect to parameters only needs ordinary reverse mode through
the perturbed forward passes.
"""
import logging
from typing import Dict, Optional, Tuple

import numpy as np

from refil.autodiff.jacobian import rademacher
from refil.autodiff.model import Model
from refil.config import SNR_EPS_Z, SNR_FD_STEP, SNR_PROBES
from refil.networks.models import shift_keys

logger = logging.getLogger("refil.networks")


class SnrLoss:
    def __init__(self, probes: int = SNR_PROBES, fd_step: float = SNR_FD_STEP, eps_z: float = SNR_EPS_Z):
        self.probes = int(probes)
        self.fd_step = float(fd_step)
        self.eps_z = float(eps_z)
        self.clamp_count = 0

    def value_and_grads(self, client: Model, xb: np.ndarray, rng: np.random.Generator,
                        need_grads: bool = True) -> Tuple[float, Dict[str, np.ndarray]]:
        """Batch-mean SNR loss and its gradient w.r.t. the client's parameters."""
        n_prefix = client.embedding_prefix_length()
        prefix, tail = client.slice(0, n_prefix), client.slice(n_prefix)
        if n_prefix:
            e, prefix_caches = prefix.forward_batch(xb)
        else:
            e = tail.check_input(np.asarray(xb), batched=True)
        b, k, eps = e.shape[0], self.probes, self.fd_step

        probes = rademacher(rng, (b, k) + tail.input_shape, e.dtype)
        plus = (e[:, None] + eps * probes).reshape((b * k,) + tail.input_shape)
        minus = (e[:, None] - eps * probes).reshape((b * k,) + tail.input_shape)
        y, caches = tail.forward_batch(np.concatenate([plus, minus, e]))
        y = y.reshape(y.shape[0], -1)
        diff = (y[:b * k] - y[b * k:2 * b * k]).reshape(b, k, -1) / (2 * eps)
        z = y[2 * b * k:]

        trace = np.mean(np.sum(np.square(diff.astype(np.float64)), axis=2), axis=1)
        energy = np.sum(np.square(z.astype(np.float64)), axis=1)
        clamped = energy < self.eps_z
        if clamped.any():
            self.clamp_count += int(clamped.sum())
            logger.warning(f"SNR loss: ||z||^2 below {self.eps_z:g} for {int(clamped.sum())} example(s), clamped")
        denom = np.where(clamped, self.eps_z, energy)
        value = float(np.mean(trace / denom))
        if not need_grads:
            return value, {}

        scale = (1.0 / (b * k * eps * denom))[:, None, None]
        g_plus = (diff * scale).reshape(b * k, -1)
        g_z = np.where(clamped, 0.0, -2.0 * trace / (b * denom ** 2))[:, None] * z
        gy = np.concatenate([g_plus, -g_plus, g_z]).astype(y.dtype)
        gy = gy.reshape((gy.shape[0],) + tail.output_shape)
        gx, grads = tail.backward_batch(caches, gy, need_input_grad=n_prefix > 0)
        grads = shift_keys(grads, n_prefix)
        if n_prefix:
            ge = (gx[:b * k].reshape((b, k) + tail.input_shape).sum(axis=1)
                  + gx[b * k:2 * b * k].reshape((b, k) + tail.input_shape).sum(axis=1)
                  + gx[2 * b * k:])
            _, prefix_grads = prefix.backward_batch(prefix_caches, ge)
            for key, value_grad in prefix_grads.items():
                grads[key] = grads[key] + value_grad if key in grads else value_grad
        return value, grads


def snr_loss(client: Model, x: np.ndarray, probes: int, rng: np.random.Generator,
             estimator: Optional[SnrLoss] = None) -> float:
    """SNR loss of a single example."""
    estimator = estimator if estimator is not None else SnrLoss(probes=probes)
    value, _ = estimator.value_and_grads(client, np.asarray(x)[None], rng, need_grads=False)
    return value

# refil/privacy/service.py
import logging
import math
from typing import Optional, Union

import numpy as np

from refil.autodiff import forward, trace_jtj_exact, trace_jtj_hutchinson
from refil.autodiff.model import Model
from refil.config import EXACT_TRACE_MAX_DIM, HUTCHINSON_K
from refil.errors import ConfigError
from refil.privacy.models import (
    AutoEstimator, ExactEstimator, HutchinsonEstimator, NoisyActivation, RefilConfig, SigmaCalibration,
)

logger = logging.getLogger("refil.privacy")

AnyEstimator = Union[ExactEstimator, HutchinsonEstimator, AutoEstimator]


def differentiable_dims(model: Model) -> tuple:
    """(d, m) of the map the leakage is measured on."""
    tail = model.slice(model.embedding_prefix_length())
    return tail.input_dim, tail.output_dim


def resolve_estimator(model: Model, estimator: Optional[AnyEstimator]) -> Union[ExactEstimator, HutchinsonEstimator]:
    if estimator is None or isinstance(estimator, AutoEstimator):
        d, m = differentiable_dims(model)
        if min(d, m) <= EXACT_TRACE_MAX_DIM:
            return ExactEstimator()
        return HutchinsonEstimator(k=HUTCHINSON_K)
    return estimator


def trace_jtj(model: Model, x: np.ndarray, estimator: Optional[AnyEstimator] = None,
              rng: Optional[np.random.Generator] = None) -> float:
    estimator = resolve_estimator(model, estimator)
    if isinstance(estimator, HutchinsonEstimator):
        rng = rng if rng is not None else np.random.default_rng(0)
        return trace_jtj_hutchinson(model, x, estimator.k, rng)
    return trace_jtj_exact(model, x)


def compute_dfil(model: Model, x: np.ndarray, sigma: float, estimator: Optional[AnyEstimator] = None,
                 rng: Optional[np.random.Generator] = None) -> float:
    """trace(J^T J) / (d * sigma^2)."""
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    d, _ = differentiable_dims(model)
    return trace_jtj(model, x, estimator, rng) / (d * sigma ** 2)


def calibrate_sigma(model: Model, x: np.ndarray, target_dfil: float, estimator: Optional[AnyEstimator] = None,
                    rng: Optional[np.random.Generator] = None) -> SigmaCalibration:
    """Noise level that brings this input's dFIL to ``target_dfil``."""
    if not target_dfil > 0:
        raise ConfigError(f"target dFIL must be positive, got {target_dfil}")
    d, _ = differentiable_dims(model)
    trace = trace_jtj(model, x, estimator, rng)
    if trace <= 0.0:
        logger.warning("Degenerate input: trace(J^T J) = 0, no noise level can set dFIL")
        return SigmaCalibration(sigma=0.0, trace_jtj=0.0, input_dim=d, degenerate=True)
    return SigmaCalibration(sigma=math.sqrt(trace / (d * target_dfil)), trace_jtj=trace, input_dim=d)


def gaussian_noise(shape, sigma: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    return (sigma * rng.standard_normal(size=shape)).astype(dtype)


def refil_forward(model: Model, x: np.ndarray, cfg: Optional[RefilConfig],
                  rng: Optional[np.random.Generator] = None) -> NoisyActivation:
    """Split-layer activation with calibrated Gaussian noise.

    ``cfg=None`` is the noise-free path: sigma 0 and infinite dFIL.
    """
    z = forward(model, x)
    d, _ = differentiable_dims(model)
    if cfg is None:
        return NoisyActivation(z_noised=z, sigma=0.0, trace_jtj=float("nan"), achieved_dfil=math.inf,
                               input_dim_d=d)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    calibration = calibrate_sigma(model, x, cfg.target_dfil, cfg.estimator, rng)
    if calibration.degenerate:
        return NoisyActivation(z_noised=z, sigma=0.0, trace_jtj=0.0, achieved_dfil=0.0,
                               input_dim_d=d, degenerate=True)
    sigma = calibration.sigma
    z_noised = z + gaussian_noise(z.shape, sigma, rng, z.dtype)
    achieved = calibration.trace_jtj / (d * sigma ** 2)
    logger.debug(f"ReFIL: sigma={sigma:.6g} dFIL={achieved:.6g} d={d} trace={calibration.trace_jtj:.6g}")
    return NoisyActivation(z_noised=z_noised, sigma=sigma, trace_jtj=calibration.trace_jtj,
                           achieved_dfil=achieved, input_dim_d=d)


def reconstruction_error_bound(dfil: float) -> float:
    """Per-dimension MSE lower bound for unbiased attackers: 1/dFIL."""
    if not dfil > 0:
        raise ConfigError(f"dFIL must be positive, got {dfil}")
    if math.isinf(dfil):
        return 0.0
    return 1.0 / dfil

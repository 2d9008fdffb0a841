"""dFIL measurement, noise calibration and the ReFIL noised split forward pass."""
from refil.privacy.models import (
    AutoEstimator, ExactEstimator, HutchinsonEstimator, NoisyActivation, RefilConfig, SigmaCalibration,
)
from refil.privacy.service import (
    calibrate_sigma, compute_dfil, gaussian_noise, reconstruction_error_bound, refil_forward,
    resolve_estimator, trace_jtj,
)

__all__ = [
    "AutoEstimator", "ExactEstimator", "HutchinsonEstimator", "NoisyActivation", "RefilConfig",
    "SigmaCalibration", "calibrate_sigma", "compute_dfil", "gaussian_noise",
    "reconstruction_error_bound", "refil_forward", "resolve_estimator", "trace_jtj",
]

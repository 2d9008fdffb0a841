# refil/attacks/metrics.py
from typing import Sequence

import numpy as np
from scipy.signal import convolve2d

from refil.config import SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW
from refil.errors import ConfigError, ShapeMismatchError


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(-1, "mse", a.shape, b.shape)
    return float(np.mean(np.square(a.astype(np.float64) - b.astype(np.float64))))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_channel(a: np.ndarray, b: np.ndarray, window: np.ndarray, c1: float, c2: float) -> float:
    def filt(img):
        return convolve2d(img, window, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    mu_a_sq, mu_b_sq, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    sigma_a_sq = filt(a * a) - mu_a_sq
    sigma_b_sq = filt(b * b) - mu_b_sq
    sigma_ab = filt(a * b) - mu_ab
    ssim_map = ((2 * mu_ab + c1) * (2 * sigma_ab + c2)) / ((mu_a_sq + mu_b_sq + c1) * (sigma_a_sq + sigma_b_sq + c2))
    return float(ssim_map.mean())


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM over the valid region, averaged over channels.

    Accepts (h, w) or (c, h, w) images of at least 11x11.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(-1, "ssim", a.shape, b.shape)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ConfigError(f"ssim expects (h, w) or (c, h, w) images, got shape {a.shape}")
    if a.shape[1] < SSIM_WINDOW or a.shape[2] < SSIM_WINDOW:
        raise ConfigError(f"image {a.shape[1]}x{a.shape[2]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    window = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    return float(np.mean([_ssim_channel(a[c], b[c], window, c1, c2) for c in range(a.shape[0])]))


def topk_success(predicted_ids: Sequence[int], true_id: int, k: int) -> int:
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    return int(true_id in list(predicted_ids)[:k])


def standard_error(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(values.size))

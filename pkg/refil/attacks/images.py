# refil/attacks/images.py
from pathlib import Path
from typing import Union

import numpy as np

from refil.errors import ConfigError


def to_bytes(image: np.ndarray, data_range: float = 1.0) -> np.ndarray:
    scaled = np.clip(np.asarray(image, dtype=np.float64), 0.0, data_range) / data_range
    return np.round(scaled * 255.0).astype(np.uint8)


def write_netpbm(path: Union[str, Path], image: np.ndarray, data_range: float = 1.0) -> Path:
    """Binary PGM for 1-channel and PPM for 3-channel (c, h, w) images.

    The suffix of ``path`` is replaced to match the format written.
    """
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ConfigError(f"expected a 1- or 3-channel (c, h, w) image, got shape {image.shape}")
    channels, h, w = image.shape
    pixels = to_bytes(image, data_range)
    if channels == 1:
        magic, suffix, body = b"P5", ".pgm", pixels[0]
    else:
        magic, suffix, body = b"P6", ".ppm", np.transpose(pixels, (1, 2, 0))
    path = Path(path).with_suffix(suffix)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(body).tobytes())
    return path


def read_netpbm(path: Union[str, Path]) -> np.ndarray:
    """Inverse of ``write_netpbm``; returns a (c, h, w) uint8 array."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"P5", b"P6"):
        raise ConfigError(f"{path} is not a binary PGM/PPM file")
    magic = parts[0]
    w, h = (int(v) for v in parts[1].split())
    channels = 1 if magic == b"P5" else 3
    pixels = np.frombuffer(parts[3][:w * h * channels], dtype=np.uint8)
    if channels == 1:
        return pixels.reshape(1, h, w)
    return np.transpose(pixels.reshape(h, w, 3), (2, 0, 1))

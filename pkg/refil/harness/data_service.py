# refil/harness/data_service.py
"""Dataset loaders (MNIST IDX, CIFAR-10 binary, MovieLens CSV) and synthetic generators."""
import csv
import gzip
import io
import logging
import struct
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from refil.config import CIFAR10_MEAN, CIFAR10_STD, DATA_DIR
from refil.data import Dataset
from refil.errors import ConfigError, DataError
from refil.harness.models import Cifar10Binary, DatasetSource, MnistIdx, MovieLensCsv, Synthetic

logger = logging.getLogger("refil.harness")

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD = 1 + 3 * 32 * 32
GZIP_MAGIC = b"\x1f\x8b"


def resolve_path(path: Union[str, Path]) -> Path:
    """``path`` as given, or under REFIL_DATA_DIR when it is relative and missing."""
    path = Path(path)
    if path.exists() or path.is_absolute():
        return path
    return Path(DATA_DIR) / path


def _read_bytes(path: Path) -> bytes:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(str(path), "open", str(e)) from e
    if raw[:2] == GZIP_MAGIC:
        try:
            return gzip.decompress(raw)
        except OSError as e:
            raise DataError(str(path), "byte 0", f"corrupt gzip stream: {e}") from e
    return raw


# -- IDX ---------------------------------------------------------------------

def read_idx(path: Union[str, Path], expected_magic: Optional[int] = None) -> np.ndarray:
    """Unsigned-byte IDX tensor (big-endian header, optionally gzip-compressed)."""
    path = resolve_path(path)
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise DataError(str(path), f"byte {len(raw)}", "truncated IDX header")
    (magic,) = struct.unpack_from(">I", raw, 0)
    if expected_magic is not None and magic != expected_magic:
        raise DataError(str(path), "byte 0", f"bad magic {magic}, expected {expected_magic}")
    if magic >> 8 != 0x08:
        raise DataError(str(path), "byte 2", f"unsupported IDX element type 0x{(magic >> 8) & 0xFF:02x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(str(path), f"byte {len(raw)}", "truncated IDX dimensions")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    count = int(np.prod(dims)) if ndim else 1
    if len(raw) - header != count:
        raise DataError(str(path), f"byte {header}", f"expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path: Union[str, Path], array: np.ndarray, compress: bool = False) -> Path:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ConfigError(f"IDX writer stores unsigned bytes, got {array.dtype}")
    header = struct.pack(">I", (0x08 << 8) | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    payload = header + np.ascontiguousarray(array).tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(gzip.compress(payload, mtime=0) if compress else payload)
    return path


def to_pixels(images: np.ndarray) -> np.ndarray:
    """[0, 1] floats to bytes, the inverse of the MNIST scaling."""
    return np.round(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)


def load_mnist(images_path: Union[str, Path], labels_path: Union[str, Path]) -> Dataset:
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataError(str(labels_path), "byte 4",
                        f"{labels.shape[0]} labels for {images.shape[0]} images")
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise DataError(str(labels_path), f"byte {8 + int(bad[0])}", f"label {labels[bad[0]]} out of range")
    inputs = (images.astype(np.float32) / 255.0)[:, None, :, :]
    logger.info(f"Loaded {inputs.shape[0]} MNIST images from {images_path}")
    return Dataset(inputs, labels.astype(np.int64), {"source": "mnist", "classes": 10})


# -- CIFAR-10 ----------------------------------------------------------------

def standardize_cifar(inputs: np.ndarray) -> np.ndarray:
    mean = np.asarray(CIFAR10_MEAN, dtype=np.float32)[None, :, None, None]
    std = np.asarray(CIFAR10_STD, dtype=np.float32)[None, :, None, None]
    return ((inputs - mean) / std).astype(np.float32)


def load_cifar10(paths: Sequence[Union[str, Path]], standardize: bool = True) -> Dataset:
    """Records of 1 label byte followed by 3072 channel-major pixel bytes."""
    inputs, labels = [], []
    for path in paths:
        path = resolve_path(path)
        raw = _read_bytes(path)
        if len(raw) % CIFAR_RECORD:
            offset = len(raw) - len(raw) % CIFAR_RECORD
            raise DataError(str(path), f"byte {offset}", f"partial record of {len(raw) % CIFAR_RECORD} bytes")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        bad = np.flatnonzero(records[:, 0] > 9)
        if bad.size:
            raise DataError(str(path), f"byte {int(bad[0]) * CIFAR_RECORD}",
                            f"label {records[bad[0], 0]} out of range")
        labels.append(records[:, 0].astype(np.int64))
        inputs.append(records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0)
        logger.info(f"Loaded {records.shape[0]} CIFAR-10 records from {path}")
    x = np.concatenate(inputs)
    if standardize:
        x = standardize_cifar(x)
    return Dataset(x, np.concatenate(labels), {"source": "cifar10", "classes": 10, "standardized": standardize})


# -- MovieLens -----------------------------------------------------------------

def load_movielens(path: Union[str, Path], like_threshold: float = 5.0, max_ratings: Optional[int] = None,
                   remap_ids: bool = True) -> Dataset:
    """``userId,movieId,rating[,timestamp]`` rows to ((uid, mid), like)."""
    path = resolve_path(path)
    text = _read_bytes(path).decode("utf-8", errors="replace")
    pairs, likes = [], []
    for line_number, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or (line_number == 1 and row[0].strip().lower() == "userid"):
            continue
        if len(row) < 3:
            raise DataError(str(path), f"line {line_number}", f"expected userId,movieId,rating, got {row}")
        try:
            uid, mid, rating = int(row[0]), int(row[1]), float(row[2])
        except ValueError as e:
            raise DataError(str(path), f"line {line_number}", str(e)) from e
        pairs.append((uid, mid))
        likes.append(1.0 if rating >= like_threshold else 0.0)
        if max_ratings is not None and len(pairs) >= max_ratings:
            break
    if not pairs:
        logger.warning(f"No ratings in {path}")
    ids = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    meta = {"source": "movielens"}
    if remap_ids:
        user_ids, users = np.unique(ids[:, 0], return_inverse=True)
        item_ids, items = np.unique(ids[:, 1], return_inverse=True)
        ids = np.stack([users, items], axis=1).astype(np.int64)
        meta.update(user_ids=user_ids, item_ids=item_ids)
    meta.update(num_users=int(ids[:, 0].max()) + 1 if len(ids) else 0,
                num_items=int(ids[:, 1].max()) + 1 if len(ids) else 0)
    logger.info(f"Loaded {len(ids)} ratings from {path}")
    return Dataset(ids, np.asarray(likes, dtype=np.float32), meta)


# -- synthetic -----------------------------------------------------------------

def synthetic_images(size: int, shape: Tuple[int, ...], classes: int, seed: int) -> Dataset:
    """Smooth random images in [0, 1]."""
    rng = np.random.default_rng(seed)
    noise = rng.random((size,) + tuple(shape))
    smooth = noise
    if len(shape) == 3:
        s = max(shape[-1] / 8.0, 1.0)
        smooth = gaussian_filter(noise, sigma=(0, 0, s, s))
    axes = tuple(range(1, smooth.ndim))
    lo, hi = smooth.min(axis=axes, keepdims=True), smooth.max(axis=axes, keepdims=True)
    images = ((smooth - lo) / np.maximum(hi - lo, 1e-12)).astype(np.float32)
    labels = rng.integers(0, classes, size=size).astype(np.int64)
    return Dataset(images, labels, {"source": "synthetic-images", "classes": classes})


def synthetic_separable(size: int, shape: Tuple[int, ...], classes: int, seed: int) -> Dataset:
    """Gaussian blobs around well separated class centers."""
    rng = np.random.default_rng(seed)
    centers = 3.0 * rng.standard_normal((classes,) + tuple(shape))
    labels = rng.integers(0, classes, size=size).astype(np.int64)
    inputs = (centers[labels] + 0.5 * rng.standard_normal((size,) + tuple(shape))).astype(np.float32)
    return Dataset(inputs, labels, {"source": "synthetic-separable", "classes": classes})


def synthetic_ratings(size: int, num_users: int, num_items: int, seed: int, rank: int = 8) -> Dataset:
    """Likes from a latent-factor model: like iff <u, v> + noise > 0."""
    rng = np.random.default_rng(seed)
    users = rng.standard_normal((num_users, rank))
    items = rng.standard_normal((num_items, rank))
    uid = rng.integers(0, num_users, size=size)
    mid = rng.integers(0, num_items, size=size)
    score = np.sum(users[uid] * items[mid], axis=1) + 0.5 * rng.standard_normal(size)
    inputs = np.stack([uid, mid], axis=1).astype(np.int64)
    meta = {"source": "synthetic-ratings", "num_users": num_users, "num_items": num_items}
    return Dataset(inputs, (score > 0).astype(np.float32), meta)


def synthetic(src: Synthetic) -> Dataset:
    if src.generator == "images":
        return synthetic_images(src.size, src.shape, src.classes, src.seed)
    if src.generator == "separable":
        return synthetic_separable(src.size, src.shape, src.classes, src.seed)
    return synthetic_ratings(src.size, src.num_users, src.num_items, src.seed)


def load_dataset(src: DatasetSource, subsample: Optional[int] = None, seed: int = 0) -> Dataset:
    if isinstance(src, MnistIdx):
        dataset = load_mnist(src.images, src.labels)
    elif isinstance(src, Cifar10Binary):
        dataset = load_cifar10(src.paths, src.standardize)
    elif isinstance(src, MovieLensCsv):
        dataset = load_movielens(src.path, src.like_threshold, src.max_ratings, src.remap_ids)
    else:
        dataset = synthetic(src)
    if subsample is not None and subsample < len(dataset):
        dataset = dataset.subset(subsample, np.random.default_rng([seed, 7]))
    return dataset

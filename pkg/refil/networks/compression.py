# refil/networks/compression.py
import logging
from typing import Optional

import numpy as np

from refil.autodiff.layers import Conv2d, Dense
from refil.errors import ConfigError
from refil.networks.models import CompressionSpec, SplitModel

logger = logging.getLogger("refil.networks")


def insert_compression(split: SplitModel, spec: CompressionSpec, seed: int = 0,
                       rng: Optional[np.random.Generator] = None) -> SplitModel:
    """Append phi (c1->c2) to the client and prepend phi' (c2->c1) to the server."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    shape = split.split_shape
    if len(shape) == 3:
        if spec.kind != "conv1x1":
            raise ConfigError(f"split activation {shape} is a feature map; use a conv1x1 compression")
        if shape[0] != spec.c1:
            raise ConfigError(f"split activation has {shape[0]} channels, compression expects c1={spec.c1}")
        phi = Conv2d.init(spec.c1, spec.c2, 1, rng)
        phi_inv = Conv2d.init(spec.c2, spec.c1, 1, rng)
    elif len(shape) == 1:
        if spec.kind != "fully_connected":
            raise ConfigError(f"split activation {shape} is a vector; use a fully_connected compression")
        if shape[0] != spec.c1:
            raise ConfigError(f"split activation has {shape[0]} features, compression expects c1={spec.c1}")
        phi = Dense.init(spec.c1, spec.c2, rng)
        phi_inv = Dense.init(spec.c2, spec.c1, rng)
    else:
        raise ConfigError(f"cannot compress a split activation of shape {shape}")

    k = split.split_index
    layers = split.layers[:k] + [phi, phi_inv] + split.layers[k:]
    compressed = SplitModel(layers, k + 1, split.full.input_shape, integer_input=split.full.integer_input,
                            name=f"{split.name}+comp{spec.c2}")
    logger.info(f"Compression {spec.c1}->{spec.c2} inserted: split shape {shape} -> {compressed.split_shape}")
    return compressed

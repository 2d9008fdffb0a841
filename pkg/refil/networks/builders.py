# refil/networks/builders.py
"""Reference split models.

Split points of the residual CNN are expressed as depth fractions of its
block stack: early is right after the first convolution, middle after block
``blocks // 2`` and late after block ``3 * blocks // 4`` (blocks 4 and 6 of 8).
"""
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

from refil.autodiff.layers import (
    AvgPool, Concat, Conv2d, Dense, EmbeddingLookup, Flatten, Layer, Relu, Residual, Standardize,
)
from refil.config import CIFAR10_MEAN, CIFAR10_STD
from refil.errors import ConfigError
from refil.networks.models import SplitModel

SplitPoint = Literal["early", "middle", "late"]

MNIST_SHAPE = (1, 28, 28)
CIFAR_SHAPE = (3, 32, 32)


def build_mlp(width: int = 1000, input_shape: Sequence[int] = MNIST_SHAPE, classes: int = 10,
              seed: int = 0) -> SplitModel:
    """Flatten, Dense(d->width) | Relu, Dense(width->classes); the client half is linear."""
    rng = np.random.default_rng(seed)
    d = int(np.prod(input_shape))
    layers = [Flatten(), Dense.init(d, width, rng), Relu(), Dense.init(width, classes, rng)]
    return SplitModel(layers, 2, input_shape, name=f"mlp-{width}")


def _block(channels: int, rng: np.random.Generator) -> List[Layer]:
    return [
        Residual([
            Conv2d.init(channels, channels, 3, rng, padding=1),
            Relu(),
            Conv2d.init(channels, channels, 3, rng, padding=1),
        ]),
        Relu(),
    ]


def build_resnet_cnn(split: SplitPoint = "early", input_shape: Sequence[int] = CIFAR_SHAPE, width: int = 16,
                     blocks: int = 8, classes: int = 10, seed: int = 0,
                     standardize: Tuple[Sequence[float], Sequence[float]] = (CIFAR10_MEAN, CIFAR10_STD)) -> SplitModel:
    """Desk-scale residual CNN: four stages of ``blocks // 4`` residual blocks."""
    c, h, w = input_shape
    if blocks < 4 or blocks % 4:
        raise ConfigError(f"block count must be a positive multiple of 4, got {blocks}")
    if h % 8 or w % 8:
        raise ConfigError(f"input height and width must be divisible by 8, got {h}x{w}")
    rng = np.random.default_rng(seed)
    mean, std = (np.asarray(v, dtype=np.float32) for v in standardize)
    if mean.shape[0] != c:
        mean, std = np.full(c, mean.mean(), np.float32), np.full(c, std.mean(), np.float32)
    layers: List[Layer] = [Standardize(mean, std), Conv2d.init(c, width, 3, rng, padding=1)]
    split_after = {"early": len(layers)}
    layers.append(Relu())
    channels = width
    per_stage = blocks // 4
    for b in range(1, blocks + 1):
        layers.extend(_block(channels, rng))
        if b == blocks // 2:
            split_after["middle"] = len(layers)
        if b == 3 * blocks // 4:
            split_after["late"] = len(layers)
        if b % per_stage == 0 and b < blocks:
            layers.append(AvgPool(2))
            if b == per_stage:
                layers.append(Conv2d.init(channels, 2 * channels, 1, rng))
                channels *= 2
    layers.extend([AvgPool(h // 8), Flatten(), Dense.init(channels, classes, rng)])
    return SplitModel(layers, split_after[split], input_shape, name=f"cnn-{split}")


def build_ncf(num_users: int, num_items: int, embedding_dim: int = 32,
              mlp: Sequence[int] = (64, 32, 16, 1), seed: int = 0) -> SplitModel:
    """uid/mid embeddings, concat, MLP; split after the first linear layer."""
    rng = np.random.default_rng(seed)
    lookup = Concat([
        [EmbeddingLookup.init(num_users, embedding_dim, rng, field=0)],
        [EmbeddingLookup.init(num_items, embedding_dim, rng, field=1)],
    ], axis=0)
    layers: List[Layer] = [lookup]
    width = 2 * embedding_dim
    for i, out in enumerate(mlp):
        if i > 0:
            layers.append(Relu())
        layers.append(Dense.init(width, out, rng))
        width = out
    return SplitModel(layers, 2, (2,), integer_input=True, name="ncf")


REFERENCE_RECIPES: Dict[str, Callable[..., SplitModel]] = {
    "mlp-1000": lambda seed=0, **kw: build_mlp(1000, seed=seed, **kw),
    "mlp-10000": lambda seed=0, **kw: build_mlp(10000, seed=seed, **kw),
    "cnn-early": lambda seed=0, **kw: build_resnet_cnn("early", seed=seed, **kw),
    "cnn-middle": lambda seed=0, **kw: build_resnet_cnn("middle", seed=seed, **kw),
    "cnn-late": lambda seed=0, **kw: build_resnet_cnn("late", seed=seed, **kw),
    "ncf": lambda seed=0, **kw: build_ncf(kw.pop("num_users", 1000), kw.pop("num_items", 1000), seed=seed, **kw),
}


def build_reference_model(name: str, seed: int = 0, **kwargs) -> SplitModel:
    if name not in REFERENCE_RECIPES:
        raise ConfigError(f"Unknown reference model '{name}'. Available: {', '.join(REFERENCE_RECIPES)}")
    return REFERENCE_RECIPES[name](seed=seed, **kwargs)


def build_reference_models(seed: int = 0, overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> Dict[str, SplitModel]:
    """The full catalog, keyed by model id; ``overrides`` holds per-model builder arguments."""
    overrides = overrides or {}
    return {name: build_reference_model(name, seed=seed, **overrides.get(name, {})) for name in REFERENCE_RECIPES}

import os
import tempfile

os.environ.setdefault("REFIL_LOG_FILE", os.path.join(tempfile.gettempdir(), "refil-tests.log"))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from refil.autodiff import (  # noqa: E402
    AvgPool, Concat, Conv2d, Dense, EmbeddingLookup, Flatten, Model, Relu, Residual,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def linear_model():
    """y = W x + b on R^2, float64."""
    weight = np.array([[2.0, 1.0], [1.0, 3.0]])
    bias = np.array([0.5, -0.25])
    return Model([Dense(weight, bias)], (2,))


@pytest.fixture
def small_mlp(rng):
    layers = [Flatten(), Dense.init(9, 6, rng), Relu(), Dense.init(6, 4, rng)]
    return Model(layers, (1, 3, 3)).astype(np.float64)


@pytest.fixture
def small_cnn(rng):
    layers = [
        Conv2d.init(2, 3, 3, rng, padding=1),
        Relu(),
        Residual([Conv2d.init(3, 3, 3, rng, padding=1)]),
        AvgPool(2),
        Flatten(),
        Dense.init(12, 5, rng),
    ]
    return Model(layers, (2, 4, 4)).astype(np.float64)


@pytest.fixture
def embedding_model(rng):
    """Two-field lookup (5 users, 7 items, dim 3) followed by a dense layer."""
    lookup = Concat([
        [EmbeddingLookup.init(5, 3, rng, field=0)],
        [EmbeddingLookup.init(7, 3, rng, field=1)],
    ], axis=0)
    return Model([lookup, Dense.init(6, 4, rng)], (2,), integer_input=True).astype(np.float64)

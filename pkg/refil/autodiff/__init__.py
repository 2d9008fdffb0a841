"""Dense tensor differentiation core: layers, models, VJP/JVP and Jacobian traces."""
from refil.autodiff.jacobian import (
    forward, full_jacobian, jvp, rademacher, trace_jtj_exact, trace_jtj_hutchinson, vjp,
)
from refil.autodiff.layers import (
    AvgPool, Concat, Conv2d, Dense, EmbeddingLookup, Flatten, Layer, Relu, Residual, Standardize,
)
from refil.autodiff.model import Model, continuous_view

__all__ = [
    "AvgPool", "Concat", "Conv2d", "Dense", "EmbeddingLookup", "Flatten", "Layer", "Model",
    "Relu", "Residual", "Standardize", "continuous_view", "forward", "full_jacobian", "jvp",
    "rademacher", "trace_jtj_exact", "trace_jtj_hutchinson", "vjp",
]

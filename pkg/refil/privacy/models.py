# refil/privacy/models.py
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat

from refil.config import HUTCHINSON_K


class ExactEstimator(BaseModel):
    kind: Literal["exact"] = "exact"


class HutchinsonEstimator(BaseModel):
    kind: Literal["hutchinson"] = "hutchinson"
    k: int = Field(default=HUTCHINSON_K, ge=1)


class AutoEstimator(BaseModel):
    """Exact when min(d, m) is small enough, Hutchinson otherwise."""
    kind: Literal["auto"] = "auto"


Estimator = Annotated[
    Union[ExactEstimator, HutchinsonEstimator, AutoEstimator],
    Field(discriminator="kind"),
]


class RefilConfig(BaseModel):
    target_dfil: PositiveFloat
    estimator: Estimator = Field(default_factory=AutoEstimator)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    per_example: Literal[True] = True


class SigmaCalibration(BaseModel):
    sigma: float
    trace_jtj: float
    input_dim: int
    degenerate: bool = False


class NoisyActivation(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    z_noised: np.ndarray
    sigma: float
    trace_jtj: float
    achieved_dfil: float
    input_dim_d: int
    degenerate: bool = False

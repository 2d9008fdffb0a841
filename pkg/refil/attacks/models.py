# refil/attacks/models.py
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt

from refil.config import (
    ATTACK_BETA1, ATTACK_BETA2, ATTACK_EPS, ATTACK_INIT_STD, ATTACK_ITERATIONS, ATTACK_LR, ATTACK_RESTARTS,
    TV_LAMBDA,
)
from refil.networks.models import AdamConfig


class UnbiasedMethod(BaseModel):
    """argmin ||z' - M(x0)||^2."""
    kind: Literal["unbiased"] = "unbiased"


class TvPriorMethod(BaseModel):
    """Unbiased objective plus lambda * TV(x0)."""
    model_config = ConfigDict(populate_by_name=True)

    kind: Literal["tv_prior"] = "tv_prior"
    lam: float = Field(default=TV_LAMBDA, ge=0.0, alias="lambda")


AttackMethod = Annotated[Union[UnbiasedMethod, TvPriorMethod], Field(discriminator="kind")]


class ZerosInit(BaseModel):
    kind: Literal["zeros"] = "zeros"


class GaussianInit(BaseModel):
    kind: Literal["gaussian"] = "gaussian"
    seed: int = Field(default=0, ge=0)
    std: PositiveFloat = ATTACK_INIT_STD


class ObservationInit(BaseModel):
    """Start from the observed activation itself (only when shapes agree)."""
    kind: Literal["observation"] = "observation"


AttackInit = Annotated[Union[ZerosInit, GaussianInit, ObservationInit], Field(discriminator="kind")]


def _attack_adam() -> AdamConfig:
    return AdamConfig(lr=ATTACK_LR, beta1=ATTACK_BETA1, beta2=ATTACK_BETA2, eps=ATTACK_EPS)


class AttackConfig(BaseModel):
    method: AttackMethod = Field(default_factory=UnbiasedMethod)
    optimizer: AdamConfig = Field(default_factory=_attack_adam)
    iterations: PositiveInt = ATTACK_ITERATIONS
    init: AttackInit = Field(default_factory=GaussianInit)
    restarts: PositiveInt = ATTACK_RESTARTS
    lr_schedule: Literal["constant", "cosine"] = "cosine"


class AttackResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    x_hat: np.ndarray
    objective_trace: List[float]
    objective: float
    mse: Optional[float] = None
    ssim: Optional[float] = None
    elapsed: float = 0.0
    restart: int = 0

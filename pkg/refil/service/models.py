# refil/service/models.py
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Annotated, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field


class MsgType(IntEnum):
    HELLO = 1
    ACTIVATION_REQUEST = 2
    PREDICTION_RESPONSE = 3
    ERROR = 4


class ErrorCode(IntEnum):
    MALFORMED_FRAME = 1
    UNKNOWN_MODEL = 2
    SHAPE_MISMATCH = 3
    UNEXPECTED_MESSAGE = 4
    INTERNAL = 5


# Wire messages. Only the split activation crosses the wire; there is no field for the raw input.

@dataclass(eq=False)
class Hello:
    model_id: str
    input_shape: Optional[Tuple[int, ...]] = None


@dataclass(eq=False)
class ActivationPayload:
    model_id: str
    tensor: np.ndarray
    sigma: Optional[float] = None
    achieved_dfil: Optional[float] = None
    request_id: int = 0


@dataclass(eq=False)
class PredictionResponse:
    request_id: int
    tensor: np.ndarray


@dataclass(eq=False)
class ErrorMessage:
    code: int
    message: str = field(default="")


WireMessage = Union[Hello, ActivationPayload, PredictionResponse, ErrorMessage]


# Server activation logging

class LogOff(BaseModel):
    kind: Literal["off"] = "off"


class HonestButCurious(BaseModel):
    """Append every received activation to ``path``."""
    kind: Literal["honest_but_curious"] = "honest_but_curious"
    path: Path


LogMode = Annotated[Union[LogOff, HonestButCurious], Field(discriminator="kind")]

# refil/networks/models.py
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, PositiveFloat, PositiveInt, model_validator

from refil.autodiff import checkpoint
from refil.autodiff.layers import Layer
from refil.autodiff.model import Model
from refil.config import SNR_PROBES
from refil.errors import ConfigError


class SplitModel:
    """A layer list cut into a client half ``layers[:split_index]`` and a server half."""

    def __init__(self, layers: Sequence[Layer], split_index: int, input_shape: Sequence[int],
                 integer_input: Optional[bool] = None, name: str = ""):
        if not 0 < split_index < len(layers):
            raise ConfigError(f"split index {split_index} outside (0, {len(layers)})")
        self.full = Model(layers, input_shape, integer_input=integer_input)
        self.split_index = int(split_index)
        self.name = name

    @property
    def layers(self) -> List[Layer]:
        return self.full.layers

    @property
    def client(self) -> Model:
        return self.full.slice(0, self.split_index)

    @property
    def server(self) -> Model:
        return self.full.slice(self.split_index)

    @property
    def split_shape(self):
        return self.client.output_shape

    def save(self, directory: Union[str, Path], model_id: Optional[str] = None) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        model_id = model_id or self.name
        checkpoint.save(self.client, directory / f"{model_id}.client.rflm")
        checkpoint.save(self.server, directory / f"{model_id}.server.rflm")

    @classmethod
    def load(cls, directory: Union[str, Path], model_id: str) -> "SplitModel":
        directory = Path(directory)
        client = checkpoint.load(directory / f"{model_id}.client.rflm")
        server = checkpoint.load(directory / f"{model_id}.server.rflm")
        if client.output_shape != server.input_shape:
            raise ConfigError(f"{model_id}: client output {client.output_shape} != server input {server.input_shape}")
        return cls(client.layers + server.layers, len(client.layers), client.input_shape,
                   integer_input=client.integer_input, name=model_id)

    def __repr__(self) -> str:
        return f"SplitModel({self.name!r}, split_index={self.split_index}, split_shape={self.split_shape})"


def shift_keys(grads: Dict[str, np.ndarray], offset: int) -> Dict[str, np.ndarray]:
    """Re-index ``"<i>.<name>"`` gradient keys by ``offset`` layers."""
    shifted = {}
    for key, value in grads.items():
        index, rest = key.split(".", 1)
        shifted[f"{int(index) + offset}.{rest}"] = value
    return shifted


class CompressionSpec(BaseModel):
    c1: PositiveInt
    c2: PositiveInt
    kind: Literal["conv1x1", "fully_connected"] = "conv1x1"

    @model_validator(mode="after")
    def _compresses(self):
        if self.c2 >= self.c1:
            raise ValueError(f"compression must reduce width: c2={self.c2} >= c1={self.c1}")
        return self


class SgdConfig(BaseModel):
    kind: Literal["sgd"] = "sgd"
    lr: PositiveFloat = 0.1
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)


class AdamConfig(BaseModel):
    kind: Literal["adam"] = "adam"
    lr: PositiveFloat = 1e-3
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: PositiveFloat = 1e-8


OptimizerConfig = Annotated[Union[SgdConfig, AdamConfig], Field(discriminator="kind")]


class TrainConfig(BaseModel):
    optimizer: OptimizerConfig = Field(default_factory=SgdConfig)
    epochs: PositiveInt = 20
    batch_size: PositiveInt = 64
    task_loss: Literal["cross_entropy", "binary_cross_entropy"] = "cross_entropy"
    snr_lambda: float = Field(default=0.0, ge=0.0)
    snr_probe_count: PositiveInt = SNR_PROBES
    lr_schedule: Literal["constant", "cosine"] = "cosine"
    noise_dfil: Optional[PositiveFloat] = None
    noise_probes: PositiveInt = 8
    seed: int = Field(default=0, ge=0)


class EpochRecord(BaseModel):
    epoch: int
    task_loss: float
    task_metric: float
    mean_snr_loss: float


class TrainingLog(BaseModel):
    records: List[EpochRecord] = Field(default_factory=list)
    snr_clamp_count: int = 0

    def to_csv(self, path: Union[str, Path]) -> None:
        lines = ["epoch,task_loss,task_metric,mean_snr_loss"]
        for r in self.records:
            lines.append(f"{r.epoch},{r.task_loss!r},{r.task_metric!r},{r.mean_snr_loss!r}")
        Path(path).write_text("\n".join(lines) + "\n")

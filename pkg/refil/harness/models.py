# refil/harness/models.py
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, PositiveFloat, PositiveInt, model_validator

from refil.attacks.models import AttackConfig
from refil.config import DEFAULT_INV_DFIL_GRID, MOVIELENS_DESK_RATINGS, MOVIELENS_LIKE_THRESHOLD
from refil.networks.models import CompressionSpec, TrainConfig
from refil.privacy.models import AutoEstimator, Estimator


class MnistIdx(BaseModel):
    kind: Literal["mnist_idx"] = "mnist_idx"
    images: Path
    labels: Path


class Cifar10Binary(BaseModel):
    kind: Literal["cifar10_binary"] = "cifar10_binary"
    paths: List[Path] = Field(min_length=1)
    standardize: bool = True


class MovieLensCsv(BaseModel):
    kind: Literal["movielens_csv"] = "movielens_csv"
    path: Path
    like_threshold: float = MOVIELENS_LIKE_THRESHOLD
    max_ratings: Optional[PositiveInt] = MOVIELENS_DESK_RATINGS
    remap_ids: bool = True


class Synthetic(BaseModel):
    """Seeded generated data: ``images`` in [0, 1], ``separable`` classes or latent-factor ``ratings``."""
    kind: Literal["synthetic"] = "synthetic"
    generator: Literal["images", "separable", "ratings"] = "images"
    size: PositiveInt = 1000
    seed: int = Field(default=0, ge=0)
    shape: Tuple[int, ...] = (1, 28, 28)
    classes: PositiveInt = 10
    num_users: PositiveInt = 100
    num_items: PositiveInt = 1000


DatasetSource = Annotated[Union[MnistIdx, Cifar10Binary, MovieLensCsv, Synthetic], Field(discriminator="kind")]

Recipe = Literal["unbiased_bound", "recommendation", "biased_ssim", "utility", "replay"]


class ExperimentSpec(BaseModel):
    name: str
    recipe: Recipe
    model: str = "mlp-1000"
    model_kwargs: Dict[str, Any] = Field(default_factory=dict)
    checkpoint_dir: Optional[Path] = None
    dataset: Optional[DatasetSource] = None
    subsample: Optional[PositiveInt] = None
    inv_dfil_grid: List[PositiveFloat] = Field(default_factory=lambda: list(DEFAULT_INV_DFIL_GRID), min_length=1)
    estimator: Estimator = Field(default_factory=AutoEstimator)
    attack: AttackConfig = Field(default_factory=AttackConfig)
    trials: PositiveInt = 100
    topk: List[PositiveInt] = Field(default_factory=lambda: [1, 5])
    train: Optional[TrainConfig] = None
    train_fraction: float = Field(default=0.8, gt=0.0, lt=1.0)
    compression: Optional[CompressionSpec] = None
    snr_lambda: float = Field(default=1e-3, ge=0.0)
    activation_log: Optional[Path] = None
    save_images: bool = True
    seed: int = Field(default=0, ge=0)
    output_dir: Path = Path("results")

    @model_validator(mode="after")
    def _recipe_inputs(self):
        if self.recipe == "replay" and self.activation_log is None:
            raise ValueError("the replay recipe needs activation_log")
        if self.recipe != "replay" and self.dataset is None:
            raise ValueError(f"the {self.recipe} recipe needs a dataset")
        return self

    @property
    def run_dir(self) -> Path:
        return self.output_dir / self.name


class ExperimentReport(BaseModel):
    name: str
    results_csv: Path
    summary_csv: Path
    plot_svg: Optional[Path] = None
    utility_csv: Optional[Path] = None
    images: List[Path] = Field(default_factory=list)
    failed_points: List[float] = Field(default_factory=list)

"""Split model builders, compression layers, the SNR loss and training."""
from refil.networks.builders import (
    build_mlp, build_ncf, build_reference_model, build_reference_models, build_resnet_cnn,
)
from refil.networks.compression import insert_compression
from refil.networks.models import (
    AdamConfig, CompressionSpec, EpochRecord, SgdConfig, SplitModel, TrainConfig, TrainingLog,
)
from refil.networks.snr import SnrLoss, snr_loss
from refil.networks.training import evaluate, roc_auc, task_loss_and_grad, train

__all__ = [
    "AdamConfig", "CompressionSpec", "EpochRecord", "SgdConfig", "SnrLoss", "SplitModel",
    "TrainConfig", "TrainingLog", "build_mlp", "build_ncf", "build_reference_model",
    "build_reference_models", "build_resnet_cnn", "evaluate", "insert_compression", "roc_auc",
    "snr_loss", "task_loss_and_grad", "train",
]

"""Dataset loaders, experiment recipes, reports and the command line."""
from refil.harness.data_service import (
    load_cifar10, load_dataset, load_mnist, load_movielens, read_idx, write_idx,
)
from refil.harness.models import (
    Cifar10Binary, ExperimentReport, ExperimentSpec, MnistIdx, MovieLensCsv, Synthetic,
)
from refil.harness.report import report, summarize
from refil.harness.service import run_experiment, trial_rng

__all__ = [
    "Cifar10Binary", "ExperimentReport", "ExperimentSpec", "MnistIdx", "MovieLensCsv", "Synthetic",
    "load_cifar10", "load_dataset", "load_mnist", "load_movielens", "read_idx", "report", "run_experiment",
    "summarize", "trial_rng", "write_idx",
]

# refil/harness/service.py
"""Experiment recipes over a 1/dFIL grid.

Every trial draws its randomness from ``SeedSequence([seed, grid, trial])``,
so results do not depend on the order trials run in.
"""
import logging
import math
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from refil.attacks import (
    AttackConfig, GaussianInit, reconstruct, reconstruct_ids, write_netpbm,
)
from refil.attacks.service import embedding_tables
from refil.autodiff.layers import Layer, Relu, Residual
from refil.autodiff.model import Model
from refil.config import CIFAR_DESK_TEST_SIZE, CIFAR_DESK_TRAIN_SIZE, MNIST_DESK_TEST_SIZE
from refil.data import Dataset
from refil.errors import RefilError
from refil.harness.data_service import load_dataset
from refil.harness.models import Cifar10Binary, ExperimentReport, ExperimentSpec, MnistIdx
from refil.harness.report import RESULTS_CSV, SUMMARY_CSV, UTILITY_CSV, Row, write_csv, write_report
from refil.networks import (
    CompressionSpec, SplitModel, TrainConfig, build_reference_model, evaluate, insert_compression, train,
)
from refil.privacy import RefilConfig, refil_forward
from refil.service.service import read_activation_log

logger = logging.getLogger("refil.harness")

UTILITY_VARIANTS = ("no_opt", "comp", "comp_snr")
UTILITY_COLUMNS = ["grid", "inv_dfil", "trial", "status"] + list(UTILITY_VARIANTS)
REPLAY_COLUMNS = ["grid", "inv_dfil", "trial", "example", "status", "request_id",
                  "sigma", "achieved_dfil", "objective", "mse", "ssim"]


def trial_rng(seed: int, grid: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, grid, trial]))


def is_linear(layers: Sequence[Layer]) -> bool:
    for layer in layers:
        if isinstance(layer, Relu):
            return False
        if isinstance(layer, Residual) and not is_linear(layer.branches()[0]):
            return False
        if any(not is_linear(branch) for branch in layer.branches()):
            return False
    return True


def _trial_attack(cfg: AttackConfig, rng: np.random.Generator) -> AttackConfig:
    if isinstance(cfg.init, GaussianInit):
        init = GaussianInit(seed=int(rng.integers(2 ** 31)), std=cfg.init.std)
        return cfg.model_copy(update={"init": init})
    return cfg


def _refil_cfg(spec: ExperimentSpec, inv_dfil: float) -> RefilConfig:
    return RefilConfig(target_dfil=1.0 / inv_dfil, estimator=spec.estimator, seed=spec.seed)


# -- models and data -----------------------------------------------------------

def desk_subsample(spec: ExperimentSpec) -> Optional[int]:
    """Explicit subsample, else the desk-scale size for MNIST and CIFAR-10."""
    if spec.subsample is not None:
        return spec.subsample
    if isinstance(spec.dataset, MnistIdx):
        return MNIST_DESK_TEST_SIZE
    if isinstance(spec.dataset, Cifar10Binary):
        return CIFAR_DESK_TRAIN_SIZE + CIFAR_DESK_TEST_SIZE
    return None


def _model_kwargs(spec: ExperimentSpec, dataset: Optional[Dataset]) -> Dict:
    kwargs = dict(spec.model_kwargs)
    if dataset is None:
        return kwargs
    if spec.model.startswith(("mlp", "cnn")):
        kwargs.setdefault("input_shape", dataset.example_shape)
        if "classes" in dataset.meta:
            kwargs.setdefault("classes", dataset.meta["classes"])
    if spec.model == "ncf":
        kwargs.setdefault("num_users", dataset.meta.get("num_users", 1000))
        kwargs.setdefault("num_items", dataset.meta.get("num_items", 1000))
    return kwargs


def _build(spec: ExperimentSpec, dataset: Optional[Dataset]) -> SplitModel:
    return build_reference_model(spec.model, seed=spec.seed, **_model_kwargs(spec, dataset))


def prepare(spec: ExperimentSpec) -> Tuple[SplitModel, Optional[Dataset]]:
    """Model (loaded, or built and optionally trained) and the examples trials draw from."""
    dataset = load_dataset(spec.dataset, desk_subsample(spec), spec.seed) if spec.dataset is not None else None
    if spec.checkpoint_dir is not None:
        return SplitModel.load(spec.checkpoint_dir, spec.model), dataset
    split = _build(spec, dataset)
    if spec.train is not None and dataset is not None:
        train_set, test_set = dataset.split(spec.train_fraction, np.random.default_rng([spec.seed, 3]))
        train(split, train_set, spec.train)
        return split, test_set
    return split, dataset


# -- per-trial recipes ---------------------------------------------------------------

def _image_trial(spec: ExperimentSpec, client: Model, dataset: Dataset, grid: int, inv_dfil: float,
                 trial: int, run_dir: Path, images: List[Path]) -> Row:
    rng = trial_rng(spec.seed, grid, trial)
    example = trial % len(dataset)
    x = dataset.inputs[example]
    noisy = refil_forward(client, x, _refil_cfg(spec, inv_dfil), rng)
    result = reconstruct(noisy.z_noised, client, _trial_attack(spec.attack, rng), x_true=x)
    if spec.save_images and trial == 0 and x.ndim == 3 and x.shape[0] in (1, 3):
        images.append(write_netpbm(run_dir / f"recon_{grid}_{trial}", result.x_hat))
    return {
        "sigma": noisy.sigma, "achieved_dfil": noisy.achieved_dfil, "objective": result.objective,
        "mse": result.mse, "ssim": result.ssim,
    }


def _field_names(client: Model) -> List[str]:
    n = len(embedding_tables(client))
    return ["user", "item"] if n == 2 else [f"field{i}" for i in range(n)]


def _recommendation_trial(spec: ExperimentSpec, client: Model, dataset: Dataset, grid: int, inv_dfil: float,
                          trial: int, run_dir: Path, images: List[Path]) -> Row:
    rng = trial_rng(spec.seed, grid, trial)
    example = trial % len(dataset)
    x = dataset.inputs[example]
    noisy = refil_forward(client, x, _refil_cfg(spec, inv_dfil), rng)
    attack = reconstruct_ids(noisy.z_noised, client, _trial_attack(spec.attack, rng),
                             true_ids=[int(i) for i in x], topk=spec.topk)
    row: Row = {
        "sigma": noisy.sigma, "achieved_dfil": noisy.achieved_dfil,
        "objective": attack["result"].objective, "mse": attack["result"].mse,
    }
    for k, flags in attack["success"].items():
        for name, flag in zip(_field_names(client), flags):
            row[f"top{k}_{name}"] = flag
    return row


def _result_columns(spec: ExperimentSpec, split: SplitModel) -> List[str]:
    if spec.recipe == "recommendation":
        cols = ["sigma", "achieved_dfil", "objective", "mse"]
        return cols + [f"top{k}_{name}" for k in spec.topk for name in _field_names(split.client)]
    cols = ["sigma", "achieved_dfil", "objective", "mse", "ssim"]
    return cols + (["bound"] if spec.recipe == "unbiased_bound" else [])


def _run_grid(spec: ExperimentSpec, split: SplitModel, dataset: Dataset, fieldnames: List[str],
              trial_fn: Callable, report: ExperimentReport) -> List[Row]:
    run_dir = spec.run_dir
    rows: List[Row] = []
    for grid, inv_dfil in enumerate(spec.inv_dfil_grid):
        logger.info(f"[{spec.name}] grid point {grid + 1}/{len(spec.inv_dfil_grid)}: 1/dFIL={inv_dfil:g}")
        point_rows: List[Row] = []
        try:
            for trial in range(spec.trials):
                row = trial_fn(spec, split.client, dataset, grid, inv_dfil, trial, run_dir, report.images)
                row.update(grid=grid, inv_dfil=inv_dfil, trial=trial, example=trial % len(dataset), status="ok")
                if spec.recipe == "unbiased_bound":
                    row["bound"] = inv_dfil
                point_rows.append(row)
            dfils = [r["achieved_dfil"] for r in point_rows if "achieved_dfil" in r]
            if dfils:
                logger.info(f"[{spec.name}] 1/dFIL={inv_dfil:g}: {len(dfils)} trials, "
                            f"mean achieved dFIL={float(np.mean(dfils)):.6g}")
        except RefilError as e:
            logger.error(f"[{spec.name}] grid point 1/dFIL={inv_dfil:g} failed: {e}")
            report.failed_points.append(inv_dfil)
            point_rows.append({"grid": grid, "inv_dfil": inv_dfil, "trial": len(point_rows),
                               "status": f"error: {type(e).__name__}"})
        rows.extend(point_rows)
        write_csv(report.results_csv, rows, fieldnames)
    return rows


# -- utility -------------------------------------------------------------------------

def _compression_for(spec: ExperimentSpec, split: SplitModel) -> CompressionSpec:
    if spec.compression is not None:
        return spec.compression
    shape = split.split_shape
    return CompressionSpec(c1=shape[0], c2=max(1, shape[0] // 4),
                           kind="conv1x1" if len(shape) == 3 else "fully_connected")


def _utility_variants(spec: ExperimentSpec, base_dataset: Optional[Dataset], train_set: Dataset,
                      inv_dfil: float) -> Dict[str, SplitModel]:
    base_cfg = spec.train if spec.train is not None else TrainConfig()
    noise_cfg = base_cfg.model_copy(update={"noise_dfil": 1.0 / inv_dfil, "snr_lambda": 0.0})
    snr_cfg = noise_cfg.model_copy(update={"snr_lambda": spec.snr_lambda})
    variants = {}
    plain = _build(spec, base_dataset)
    compression = _compression_for(spec, plain)
    for name, cfg, compress in (("no_opt", noise_cfg, False), ("comp", noise_cfg, True),
                                ("comp_snr", snr_cfg, True)):
        split = _build(spec, base_dataset)
        if compress:
            split = insert_compression(split, compression, seed=spec.seed)
        logger.info(f"[{spec.name}] training {name} at 1/dFIL={inv_dfil:g}")
        variants[name], _ = train(split, train_set, cfg)
    return variants


def _run_utility(spec: ExperimentSpec, dataset: Dataset, report: ExperimentReport) -> List[Row]:
    train_set, test_set = dataset.split(spec.train_fraction, np.random.default_rng([spec.seed, 3]))
    task_loss = (spec.train or TrainConfig()).task_loss
    rows: List[Row] = []
    table: List[Row] = []
    for grid, inv_dfil in enumerate(spec.inv_dfil_grid):
        point_rows: List[Row] = []
        try:
            variants = _utility_variants(spec, dataset, train_set, inv_dfil)
            for trial in range(spec.trials):
                row: Row = {"grid": grid, "inv_dfil": inv_dfil, "trial": trial, "status": "ok"}
                for name, split in variants.items():
                    rng = trial_rng(spec.seed, grid, trial)
                    row[name] = evaluate(split, test_set, _refil_cfg(spec, inv_dfil), rng, task_loss=task_loss)
                point_rows.append(row)
            table.append({"inv_dfil": inv_dfil,
                          **{name: float(np.mean([r[name] for r in point_rows])) for name in UTILITY_VARIANTS}})
        except RefilError as e:
            logger.error(f"[{spec.name}] utility point 1/dFIL={inv_dfil:g} failed: {e}")
            report.failed_points.append(inv_dfil)
            point_rows.append({"grid": grid, "inv_dfil": inv_dfil, "trial": 0,
                               "status": f"error: {type(e).__name__}"})
        rows.extend(point_rows)
        write_csv(report.results_csv, rows, UTILITY_COLUMNS)
    report.utility_csv = write_csv(spec.run_dir / UTILITY_CSV,
                                   [{**r, "comp+snr": r["comp_snr"]} for r in table],
                                   ["inv_dfil", "no_opt", "comp", "comp+snr"])
    return rows


# -- replay --------------------------------------------------------------------------

def _run_replay(spec: ExperimentSpec, split: SplitModel, dataset: Optional[Dataset],
                report: ExperimentReport) -> List[Row]:
    client = split.client
    rows: List[Row] = []
    for trial, payload in enumerate(read_activation_log(spec.activation_log)):
        if trial >= spec.trials:
            break
        dfil = payload.achieved_dfil
        inv_dfil = float(f"{1.0 / dfil:.6g}") if dfil and math.isfinite(dfil) else 0.0
        x_true = dataset.inputs[trial % len(dataset)] if dataset is not None else None
        row: Row = {"grid": 0, "inv_dfil": inv_dfil, "trial": trial, "request_id": payload.request_id,
                    "sigma": payload.sigma, "achieved_dfil": dfil}
        try:
            rng = trial_rng(spec.seed, 0, trial)
            result = reconstruct(payload.tensor, client, _trial_attack(spec.attack, rng), x_true=x_true)
            row.update(status="ok", objective=result.objective, mse=result.mse, ssim=result.ssim,
                       example=trial % len(dataset) if dataset is not None else None)
            if spec.save_images and trial == 0 and result.x_hat.ndim == 3 and result.x_hat.shape[0] in (1, 3):
                report.images.append(write_netpbm(spec.run_dir / f"recon_0_{trial}", result.x_hat))
        except RefilError as e:
            logger.error(f"[{spec.name}] replay of request {payload.request_id} failed: {e}")
            row["status"] = f"error: {type(e).__name__}"
        rows.append(row)
    write_csv(report.results_csv, rows, REPLAY_COLUMNS)
    return rows


# -- entry point -----------------------------------------------------------------------

def run_experiment(spec: ExperimentSpec) -> ExperimentReport:
    """Run one recipe and write results.csv, summary.csv, plot.svg (and utility.csv)."""
    run_dir = spec.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "spec.json").write_text(spec.model_dump_json(indent=2))
    report = ExperimentReport(name=spec.name, results_csv=run_dir / RESULTS_CSV, summary_csv=run_dir / SUMMARY_CSV)
    logger.info(f"Running experiment '{spec.name}' ({spec.recipe}) into {run_dir}")

    if spec.recipe == "utility":
        dataset = load_dataset(spec.dataset, desk_subsample(spec), spec.seed)
        fieldnames = UTILITY_COLUMNS
        rows = _run_utility(spec, dataset, report)
    else:
        split, dataset = prepare(spec)
        if spec.recipe == "replay":
            fieldnames = REPLAY_COLUMNS
            rows = _run_replay(spec, split, dataset, report)
        else:
            if spec.recipe == "unbiased_bound" and not is_linear(split.client.layers):
                logger.warning(f"[{spec.name}] client of '{spec.model}' is not linear; "
                               f"the 1/dFIL bound is not guaranteed for it")
            trial_fn = _recommendation_trial if spec.recipe == "recommendation" else _image_trial
            fieldnames = ["grid", "inv_dfil", "trial", "example", "status"] + _result_columns(spec, split)
            rows = _run_grid(spec, split, dataset, fieldnames, trial_fn, report)

    _, report.plot_svg = write_report(run_dir, fieldnames, rows, title=spec.name)
    logger.info(f"Experiment '{spec.name}' done: {len(rows)} rows, failed points {report.failed_points}")
    return report

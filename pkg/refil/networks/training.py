# refil/networks/training.py
import logging
import math
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.stats import rankdata

from refil.data import Dataset
from refil.errors import ConfigError, DivergenceError
from refil.networks.models import SplitModel, TrainConfig, TrainingLog, EpochRecord, shift_keys
from refil.networks.optimizers import make_optimizer
from refil.networks.snr import SnrLoss
from refil.privacy import HutchinsonEstimator, RefilConfig, calibrate_sigma, gaussian_noise, refil_forward

logger = logging.getLogger("refil.networks")


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def task_loss_and_grad(logits: np.ndarray, labels: np.ndarray, kind: str) -> Tuple[float, np.ndarray]:
    """Batch-mean loss and its gradient w.r.t. the logits."""
    b = logits.shape[0]
    z = logits.astype(np.float64)
    if kind == "binary_cross_entropy":
        z = z.reshape(b)
        y = labels.astype(np.float64).reshape(b)
        loss = -np.mean(y * _log_sigmoid(z) + (1 - y) * _log_sigmoid(-z))
        grad = (1.0 / (1.0 + np.exp(-z)) - y) / b
        return float(loss), grad.reshape(logits.shape).astype(logits.dtype)
    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    idx = labels.astype(np.int64)
    loss = -np.mean(log_probs[np.arange(b), idx])
    grad = np.exp(log_probs)
    grad[np.arange(b), idx] -= 1.0
    return float(loss), (grad / b).astype(logits.dtype)


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the rank-sum statistic; ties get average ranks."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel() > 0.5
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def task_metric(logits: np.ndarray, labels: np.ndarray, kind: str) -> float:
    if kind == "binary_cross_entropy":
        return roc_auc(logits.reshape(-1), labels)
    return float(np.mean(np.argmax(logits, axis=1) == labels.astype(np.int64)))


def _noised(split: SplitModel, xb: np.ndarray, z: np.ndarray, dfil: float, probes: int,
            rng: np.random.Generator) -> np.ndarray:
    client = split.client
    estimator = HutchinsonEstimator(k=probes)
    out = z.copy()
    for i in range(xb.shape[0]):
        calibration = calibrate_sigma(client, xb[i], dfil, estimator, rng)
        if not calibration.degenerate:
            out[i] += gaussian_noise(z.shape[1:], calibration.sigma, rng, z.dtype)
    return out


def _accumulate(total: Dict[str, np.ndarray], extra: Dict[str, np.ndarray], weight: float) -> None:
    for key, value in extra.items():
        total[key] = total[key] + weight * value if key in total else weight * value


def train(split: SplitModel, dataset: Dataset, cfg: TrainConfig) -> Tuple[SplitModel, TrainingLog]:
    """Minimize task_loss + snr_lambda * snr_loss in place; returns the model and its log."""
    client, server = split.client, split.server
    if dataset.example_shape != split.full.input_shape:
        raise ConfigError(
            f"dataset examples {dataset.example_shape} do not match model input {split.full.input_shape}"
        )
    shuffle_rng = np.random.default_rng([cfg.seed, 0])
    probe_rng = np.random.default_rng([cfg.seed, 1])
    noise_rng = np.random.default_rng([cfg.seed, 2])
    batches_per_epoch = math.ceil(len(dataset) / cfg.batch_size)
    optimizer = make_optimizer(cfg.optimizer, split.full.parameters(), schedule=cfg.lr_schedule,
                               total_steps=cfg.epochs * batches_per_epoch)
    snr = SnrLoss(probes=cfg.snr_probe_count)
    log = TrainingLog()
    batch_index = 0

    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(dataset))
        losses, snr_values, all_logits, all_labels = [], [], [], []
        for xb, yb in dataset.batches(cfg.batch_size, order):
            z, client_caches = client.forward_batch(xb)
            if cfg.noise_dfil is not None:
                z = _noised(split, xb, z, cfg.noise_dfil, cfg.noise_probes, noise_rng)
            logits, server_caches = server.forward_batch(z)
            loss, g_logits = task_loss_and_grad(logits, yb, cfg.task_loss)
            gz, server_grads = server.backward_batch(server_caches, g_logits, need_input_grad=True)
            _, grads = client.backward_batch(client_caches, gz)
            grads.update(shift_keys(server_grads, split.split_index))

            snr_value, snr_grads = snr.value_and_grads(client, xb, probe_rng, need_grads=cfg.snr_lambda > 0)
            if cfg.snr_lambda > 0:
                _accumulate(grads, snr_grads, cfg.snr_lambda)
            total = loss + cfg.snr_lambda * snr_value
            if not math.isfinite(total):
                raise DivergenceError(batch_index, total)
            optimizer.step(grads)

            losses.append(loss)
            snr_values.append(snr_value)
            all_logits.append(logits)
            all_labels.append(yb)
            batch_index += 1

        record = EpochRecord(
            epoch=epoch,
            task_loss=float(np.mean(losses)),
            task_metric=task_metric(np.concatenate(all_logits), np.concatenate(all_labels), cfg.task_loss),
            mean_snr_loss=float(np.mean(snr_values)),
        )
        log.records.append(record)
        logger.info(f"Epoch {epoch}/{cfg.epochs}: loss={record.task_loss:.4f} "
                    f"metric={record.task_metric:.4f} snr={record.mean_snr_loss:.4g} lr={optimizer.lr:.4g}")
    log.snr_clamp_count = snr.clamp_count
    return split, log


def evaluate(split: SplitModel, dataset: Dataset, refil_cfg: Optional[RefilConfig] = None,
             rng: Optional[np.random.Generator] = None, task_loss: str = "cross_entropy",
             batch_size: int = 256) -> float:
    """Task metric with the split activation noised by ReFIL (or clean when ``refil_cfg`` is None)."""
    client, server = split.client, split.server
    logits = []
    if refil_cfg is None:
        for xb, _ in dataset.batches(batch_size):
            logits.append(server.predict(client.predict(xb)))
    else:
        rng = rng if rng is not None else np.random.default_rng(refil_cfg.seed)
        for i in range(len(dataset)):
            noisy = refil_forward(client, dataset.inputs[i], refil_cfg, rng)
            logits.append(server.predict(noisy.z_noised[None]))
    return task_metric(np.concatenate(logits), dataset.labels, task_loss)

# refil/attacks/service.py
import logging
import math
import time
from typing import List, Optional, Sequence, Tuple

import numpy as np

from refil.attacks.metrics import mse, ssim, topk_success
from refil.attacks.models import (
    AttackConfig, AttackResult, GaussianInit, ObservationInit, TvPriorMethod, ZerosInit,
)
from refil.autodiff.layers import Concat, EmbeddingLookup
from refil.autodiff.model import Model
from refil.errors import AttackFailedError, ConfigError, ShapeMismatchError
from refil.networks.optimizers import Adam

logger = logging.getLogger("refil.attacks")


def tv(x: np.ndarray) -> float:
    """Anisotropic total variation of a (c, h, w) image."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ConfigError(f"TV expects a (c, h, w) image, got rank {x.ndim}")
    return float(np.abs(np.diff(x, axis=1)).sum() + np.abs(np.diff(x, axis=2)).sum())


def tv_grad(x: np.ndarray) -> np.ndarray:
    """Subgradient of ``tv``; zero at kinks."""
    if x.ndim != 3:
        raise ConfigError(f"TV expects a (c, h, w) image, got rank {x.ndim}")
    grad = np.zeros_like(x)
    s = np.sign(np.diff(x, axis=1))
    grad[:, 1:, :] += s
    grad[:, :-1, :] -= s
    s = np.sign(np.diff(x, axis=2))
    grad[:, :, 1:] += s
    grad[:, :, :-1] -= s
    return grad


def attack_target(client: Model) -> Model:
    """The differentiable part of the client the attacker inverts."""
    return client.slice(client.embedding_prefix_length())


def _initial_point(cfg: AttackConfig, target: Model, z: np.ndarray, restart: int) -> np.ndarray:
    shape, dtype = target.input_shape, target.dtype
    init = cfg.init
    if isinstance(init, ZerosInit):
        return np.zeros(shape, dtype=dtype)
    if isinstance(init, ObservationInit):
        if z.size != target.input_dim:
            raise ConfigError(
                f"observation init needs the activation ({z.size} values) to match the input ({target.input_dim})"
            )
        return z.reshape(shape).astype(dtype)
    rng = np.random.default_rng([init.seed, restart])
    return (init.std * rng.standard_normal(size=shape)).astype(dtype)


def _objective(target: Model, x: np.ndarray, z: np.ndarray, lam: float) -> Tuple[float, np.ndarray]:
    y, caches = target.forward_batch(x[None])
    residual = y[0] - z
    value = float(np.sum(np.square(residual.astype(np.float64))))
    grad = target.vjp_batch(caches, (2.0 * residual)[None])[0]
    if lam > 0:
        value += lam * tv(x)
        grad = grad + lam * tv_grad(x)
    return value, grad


def _run(target: Model, z: np.ndarray, cfg: AttackConfig, lam: float,
         x0: np.ndarray) -> Tuple[np.ndarray, float, List[float]]:
    x = x0
    optimizer = Adam({"x": x}, cfg.optimizer.lr, beta1=cfg.optimizer.beta1, beta2=cfg.optimizer.beta2,
                     eps=cfg.optimizer.eps, schedule=cfg.lr_schedule, total_steps=cfg.iterations)
    trace: List[float] = []
    best_x, best = x.copy(), math.inf
    for _ in range(cfg.iterations):
        value, grad = _objective(target, x, z, lam)
        trace.append(value)
        if not math.isfinite(value):
            return x, value, trace
        if value < best:
            best, best_x = value, x.copy()
        optimizer.step({"x": grad})
    value, _ = _objective(target, x, z, lam)
    trace.append(value)
    if math.isfinite(value) and value < best:
        best, best_x = value, x.copy()
    return best_x, best, trace


def reconstruct(z_noised: np.ndarray, client: Model, cfg: Optional[AttackConfig] = None,
                x_true: Optional[np.ndarray] = None, data_range: float = 1.0) -> AttackResult:
    """Minimize ||z' - M_client(x0)||^2 (+ lambda TV(x0)) over x0 with Adam.

    For clients with an embedding prefix ``x0`` is the continuous embedding
    and ``x_true`` must be given in that space too.
    """
    cfg = cfg if cfg is not None else AttackConfig()
    target = attack_target(client)
    z = np.asarray(z_noised, dtype=target.dtype)
    if z.shape != target.output_shape:
        raise ShapeMismatchError(len(client.layers) - 1, "attack target", target.output_shape, z.shape)
    lam = cfg.method.lam if isinstance(cfg.method, TvPriorMethod) else 0.0
    restarts = cfg.restarts if isinstance(cfg.init, GaussianInit) else 1

    start = time.perf_counter()
    best: Optional[Tuple[np.ndarray, float, List[float], int]] = None
    for restart in range(restarts):
        x_hat, objective, trace = _run(target, z, cfg, lam, _initial_point(cfg, target, z, restart))
        if not math.isfinite(objective):
            logger.warning(f"Attack restart {restart + 1}/{restarts} went non-finite, restarting")
            continue
        logger.debug(f"Attack restart {restart + 1}/{restarts}: objective={objective:.6g}")
        if best is None or objective < best[1]:
            best = (x_hat, objective, trace, restart)
    if best is None:
        raise AttackFailedError(restarts)
    elapsed = time.perf_counter() - start

    x_hat, objective, trace, restart = best
    result = AttackResult(x_hat=x_hat, objective_trace=trace, objective=objective, elapsed=elapsed, restart=restart)
    if x_true is not None:
        x_true = np.asarray(x_true)
        result.mse = mse(x_hat, x_true)
        if x_hat.ndim == 3 and min(x_hat.shape[1:]) >= 11:
            result.ssim = ssim(np.clip(x_hat, 0.0, data_range), x_true, data_range=data_range)
    logger.info(f"Attack finished in {elapsed:.2f}s: objective={objective:.6g}"
                + (f" mse={result.mse:.6g}" if result.mse is not None else ""))
    return result


def _distances(emb_hat: np.ndarray, table: np.ndarray) -> np.ndarray:
    table = np.asarray(table)
    if table.ndim != 2 or table.shape[0] == 0:
        raise ConfigError("embedding table is empty")
    emb_hat = np.asarray(emb_hat).reshape(-1)
    if emb_hat.shape[0] != table.shape[1]:
        raise ShapeMismatchError(-1, "embedding table", (table.shape[1],), emb_hat.shape)
    diff = table.astype(np.float64) - emb_hat.astype(np.float64)
    return np.sum(diff * diff, axis=1)


def embedding_id_attack(emb_hat: np.ndarray, table: np.ndarray) -> int:
    """Index of the nearest table row; ties go to the lowest index."""
    return int(np.argmin(_distances(emb_hat, table)))


def rank_rows(emb_hat: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Row indices sorted by distance to ``emb_hat``, stable on ties."""
    return np.argsort(_distances(emb_hat, table), kind="stable")


def embedding_tables(client: Model) -> List[EmbeddingLookup]:
    """Lookups of the client's embedding prefix, in the order their outputs are concatenated."""
    lookups: List[EmbeddingLookup] = []
    for layer in client.layers[:client.embedding_prefix_length()]:
        if isinstance(layer, EmbeddingLookup):
            lookups.append(layer)
        elif isinstance(layer, Concat) and layer.axis == 0:
            for branch in layer.branches():
                if len(branch) != 1 or not isinstance(branch[0], EmbeddingLookup):
                    raise ConfigError("embedding prefix branches must be single lookups")
                lookups.append(branch[0])
        else:
            raise ConfigError(f"unsupported embedding prefix layer {layer.name}")
    if not lookups:
        raise ConfigError("client has no embedding prefix")
    return lookups


def reconstruct_ids(z_noised: np.ndarray, client: Model, cfg: Optional[AttackConfig] = None,
                    true_ids: Optional[Sequence[int]] = None,
                    tables: Optional[Sequence[np.ndarray]] = None,
                    topk: Sequence[int] = (1, 5)) -> dict:
    """Reconstruct the embedding, then rank each field's table rows.

    Returns the attack result, per-field rankings and, when ``true_ids`` is
    given, the embedding MSE and top-k successes per field.
    """
    lookups = embedding_tables(client)
    tables = [lookup.table for lookup in lookups] if tables is None else list(tables)
    x_true = None
    if true_ids is not None:
        x_true = np.concatenate([t[int(i)] for t, i in zip(tables, true_ids)])
    result = reconstruct(z_noised, client, cfg, x_true=x_true)

    rankings, offset = [], 0
    for table in tables:
        width = table.shape[1]
        rankings.append(rank_rows(result.x_hat[offset:offset + width], table))
        offset += width
    report = {"result": result, "rankings": rankings}
    if true_ids is not None:
        report["success"] = {
            k: [topk_success(ranking, int(true), k) for ranking, true in zip(rankings, true_ids)] for k in topk
        }
    return report

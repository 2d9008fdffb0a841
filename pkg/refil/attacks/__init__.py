"""Reconstruction attacks on noised split activations and attack-quality metrics."""
from refil.attacks.images import read_netpbm, write_netpbm
from refil.attacks.metrics import mse, ssim, standard_error, topk_success
from refil.attacks.models import (
    AttackConfig, AttackResult, GaussianInit, ObservationInit, TvPriorMethod, UnbiasedMethod, ZerosInit,
)
from refil.attacks.service import (
    attack_target, embedding_id_attack, embedding_tables, rank_rows, reconstruct, reconstruct_ids, tv, tv_grad,
)

__all__ = [
    "AttackConfig", "AttackResult", "GaussianInit", "ObservationInit", "TvPriorMethod", "UnbiasedMethod",
    "ZerosInit", "attack_target", "embedding_id_attack", "embedding_tables", "mse", "rank_rows",
    "read_netpbm", "reconstruct", "reconstruct_ids", "ssim", "standard_error", "topk_success", "tv",
    "tv_grad", "write_netpbm",
]

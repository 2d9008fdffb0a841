# refil/networks/optimizers.py
import math
from typing import Dict, Union

import numpy as np

from refil.networks.models import AdamConfig, SgdConfig


class Optimizer:
    """Updates a dict of named arrays in place."""

    def __init__(self, params: Dict[str, np.ndarray], lr: float, schedule: str = "constant", total_steps: int = 1):
        self.params = params
        self.base_lr = float(lr)
        self.schedule = schedule
        self.total_steps = max(int(total_steps), 1)
        self.steps = 0

    @property
    def lr(self) -> float:
        if self.schedule == "cosine":
            progress = min(self.steps, self.total_steps) / self.total_steps
            return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
        return self.base_lr

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        lr = self.lr
        for key, grad in grads.items():
            self._update(key, self.params[key], grad, lr)
        self.steps += 1

    def _update(self, key: str, param: np.ndarray, grad: np.ndarray, lr: float) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, params, lr, momentum: float = 0.9, **kwargs):
        super().__init__(params, lr, **kwargs)
        self.momentum = momentum
        self.velocity: Dict[str, np.ndarray] = {}

    def _update(self, key, param, grad, lr):
        v = self.velocity.get(key)
        v = grad.copy() if v is None else self.momentum * v + grad
        self.velocity[key] = v
        param -= (lr * v).astype(param.dtype, copy=False)


class Adam(Optimizer):
    def __init__(self, params, lr, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, **kwargs):
        super().__init__(params, lr, **kwargs)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def _update(self, key, param, grad, lr):
        m = self.m.get(key, np.zeros_like(param))
        v = self.v.get(key, np.zeros_like(param))
        m = self.beta1 * m + (1 - self.beta1) * grad
        v = self.beta2 * v + (1 - self.beta2) * grad * grad
        self.m[key], self.v[key] = m, v
        t = self.steps + 1
        m_hat = m / (1 - self.beta1 ** t)
        v_hat = v / (1 - self.beta2 ** t)
        param -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(param.dtype, copy=False)


def make_optimizer(cfg: Union[SgdConfig, AdamConfig], params: Dict[str, np.ndarray],
                   schedule: str = "constant", total_steps: int = 1) -> Optimizer:
    if isinstance(cfg, AdamConfig):
        return Adam(params, cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
                    schedule=schedule, total_steps=total_steps)
    return SGD(params, cfg.lr, momentum=cfg.momentum, schedule=schedule, total_steps=total_steps)

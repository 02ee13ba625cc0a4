"""
AdamW with decoupled weight decay and a step learning-rate schedule

Only matrices and kernels (ndim >= 2) are decayed; biases, norm scales and
1-D offsets are not.
"""
import logging
from typing import Dict, Mapping

import numpy as np

from grm.autograd.tensor import Tensor
from grm.schemas.config import OptimizerConfig

logger = logging.getLogger(__name__)


def step_decay_lr(base_lr: float, epoch: int, decay_epoch: int, factor: float) -> float:
    """Learning rate for a 0-indexed epoch: base before decay_epoch, base·factor from it on"""
    return base_lr * factor if epoch >= decay_epoch else base_lr


class AdamW:
    """
    θ ← θ − lr·(m̂ / (√v̂ + ε) + λ·θ)

    Args:
        params: Named leaf tensors, updated in place
        lr: Initial learning rate
        cfg: Betas, epsilon, weight decay and optional global-norm clipping
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float, cfg: OptimizerConfig):
        self.params = dict(params)
        self.lr = lr
        self.cfg = cfg
        self.step_count = 0
        self._m: Dict[str, np.ndarray] = {name: np.zeros(t.shape) for name, t in self.params.items()}
        self._v: Dict[str, np.ndarray] = {name: np.zeros(t.shape) for name, t in self.params.items()}

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.zero_grad()

    def grad_norm(self) -> float:
        total = sum(float(np.sum(t.grad ** 2)) for t in self.params.values() if t.grad is not None)
        return float(np.sqrt(total))

    def step(self) -> float:
        """
        Apply one update from the accumulated gradients

        Returns:
            Global gradient norm before clipping
        """
        self.step_count += 1
        beta1, beta2 = self.cfg.beta1, self.cfg.beta2
        norm = self.grad_norm()
        scale = 1.0
        if self.cfg.grad_clip_norm is not None and norm > self.cfg.grad_clip_norm:
            scale = self.cfg.grad_clip_norm / norm

        correction1 = 1.0 - beta1 ** self.step_count
        correction2 = 1.0 - beta2 ** self.step_count
        for name, tensor in self.params.items():
            if tensor.grad is None:
                continue
            grad = tensor.grad * scale
            m, v = self._m[name], self._v[name]
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * grad * grad
            update = (m / correction1) / (np.sqrt(v / correction2) + self.cfg.eps)
            if tensor.ndim >= 2 and self.cfg.weight_decay > 0:
                update = update + self.cfg.weight_decay * tensor.data
            tensor.data -= self.lr * update
        return norm

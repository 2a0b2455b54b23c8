"""SGD and LARS updates plus the warmup / linear-decay schedule."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .nn import Parameter


def sgd_step(params: Sequence[Parameter], grads: Sequence[Optional[np.ndarray]], lr: float) -> None:
    """``p <- p - lr * g`` for every non-frozen parameter that has a gradient."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for p, g in zip(params, grads):
        if p.frozen or g is None:
            continue
        p.data -= (lr * g).astype(p.dtype, copy=False)


def lars_trust_ratio(p: np.ndarray, g: np.ndarray, trust_coeff: float, weight_decay: float) -> float:
    p_norm = float(np.linalg.norm(p))
    g_norm = float(np.linalg.norm(g))
    if p_norm == 0.0 or g_norm == 0.0:
        # zero-initialised tensors (biases, BN shifts) would otherwise never move
        return 1.0
    return trust_coeff * p_norm / (g_norm + weight_decay * p_norm + 1e-9)


def lars_step(params: Sequence[Parameter], grads: Sequence[Optional[np.ndarray]], lr: float,
              state: dict, trust_coeff: float = 0.001, weight_decay: float = 0.0,
              momentum: float = 0.9) -> None:
    """Layer-wise adaptive step; ``state`` holds the per-parameter momentum buffers."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for p, g in zip(params, grads):
        if p.frozen or g is None:
            continue
        local_lr = lars_trust_ratio(p.data, g, trust_coeff, weight_decay)
        if weight_decay:
            g = g + weight_decay * p.data
        buf = state.get(id(p))
        update = lr * local_lr * g
        if momentum:
            buf = update if buf is None else momentum * buf + update
            state[id(p)] = buf
            update = buf
        p.data -= update.astype(p.dtype, copy=False)


def warmup_linear_decay(step: int, base_lr: float, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup from 0 to ``base_lr`` then linear decay to 0 at ``total_steps``."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    return base_lr * max(0.0, 1.0 - (step - warmup_steps) / span)


class Optimizer:
    def __init__(self, params: Sequence[Parameter], lr: float):
        self.params = list(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: Optional[float] = None) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, params, lr: float = 0.1, momentum: float = 0.0):
        super().__init__(params, lr)
        self.momentum = momentum
        self._velocity: dict[int, np.ndarray] = {}

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        if not self.momentum:
            sgd_step(self.params, [p.grad for p in self.params], lr)
            return
        grads = []
        for p in self.params:
            if p.grad is None or p.frozen:
                grads.append(None)
                continue
            v = self._velocity.get(id(p))
            v = p.grad.copy() if v is None else self.momentum * v + p.grad
            self._velocity[id(p)] = v
            grads.append(v)
        sgd_step(self.params, grads, lr)


class LARS(Optimizer):
    def __init__(self, params, lr: float = 0.003, trust_coeff: float = 0.001,
                 weight_decay: float = 0.0, momentum: float = 0.9):
        super().__init__(params, lr)
        self.trust_coeff = trust_coeff
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.state: dict[int, np.ndarray] = {}

    def step(self, lr=None):
        lars_step(self.params, [p.grad for p in self.params], self.lr if lr is None else lr,
                  self.state, self.trust_coeff, self.weight_decay, self.momentum)


def make_optimizer(kind: str, params, **kwargs) -> Optimizer:
    if kind == "sgd":
        return SGD(params, **kwargs)
    if kind == "lars":
        return LARS(params, **kwargs)
    raise ValueError(f"unknown optimizer kind {kind!r}")

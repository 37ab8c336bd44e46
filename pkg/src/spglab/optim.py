"""Parameter update rules.

Two optimizers cover the training recipes: plain SGD and an adaptive rule
with decoupled weight decay (AdamW-style). Both skip the parameter write
when the effective learning rate is exactly zero, so a zero-rate epoch
leaves every parameter bitwise unchanged while the adaptive moments still
advance. That property is what makes the cold-start phase meaningful:
moment estimates warm up against live gradients without moving the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .autodiff import Tensor


@dataclass
class OptimizerState:
    """Per-parameter slot data plus the shared step counter."""

    step: int = 0
    slots: Dict[int, Dict[str, np.ndarray]] = field(default_factory=dict)


class Sgd:
    """Vanilla stochastic gradient descent: p -= lr * g."""

    name = "sgd"

    def __init__(self, params: List[Tensor], lr: float):
        if lr < 0:
            raise ValueError(f"sgd: learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = float(lr)
        self.state = OptimizerState()

    def step(self, lr_scale: float = 1.0) -> None:
        self.state.step += 1
        lr = self.lr * lr_scale
        if lr == 0.0:
            return
        for p in self.params:
            if p.grad is None:
                continue
            p.data -= lr * p.grad


class AdamW:
    """Adaptive moments with bias correction and decoupled weight decay.

    Moment estimates are updated on every step, including steps where the
    effective learning rate is zero; only the parameter write is gated.
    """

    name = "adamw"

    def __init__(
        self,
        params: List[Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if lr < 0:
            raise ValueError(f"adamw: learning rate must be >= 0, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"adamw: betas must lie in [0, 1), got {beta1}, {beta2}")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.state = OptimizerState()

    def _slot(self, p: Tensor) -> Dict[str, np.ndarray]:
        key = id(p)
        slot = self.state.slots.get(key)
        if slot is None:
            slot = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}
            self.state.slots[key] = slot
        return slot

    def step(self, lr_scale: float = 1.0) -> None:
        self.state.step += 1
        t = self.state.step
        lr = self.lr * lr_scale
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p in self.params:
            if p.grad is None:
                continue
            slot = self._slot(p)
            slot["m"] = self.beta1 * slot["m"] + (1.0 - self.beta1) * p.grad
            slot["v"] = self.beta2 * slot["v"] + (1.0 - self.beta2) * (p.grad * p.grad)
            if lr == 0.0:
                continue
            m_hat = slot["m"] / bc1
            v_hat = slot["v"] / bc2
            if self.weight_decay != 0.0:
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind: str, params: List[Tensor], lr: float, weight_decay: float = 0.0):
    kind = kind.lower()
    if kind == "sgd":
        return Sgd(params, lr)
    if kind == "adamw":
        return AdamW(params, lr, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer '{kind}' (expected sgd or adamw)")

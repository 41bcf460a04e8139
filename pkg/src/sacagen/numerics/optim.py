"""Parameters, AdamW and the linear learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, get_default_dtype


class MissingGradient(KeyError):
    pass


class Parameter(Tensor):
    __slots__ = ("name", "trainable", "group")

    def __init__(self, data, name: str, group: str = "backbone", trainable: bool = True):
        super().__init__(np.array(data, dtype=get_default_dtype()), requires_grad=trainable)
        self.name = name
        self.group = group
        self.trainable = trainable

    def set_trainable(self, flag: bool) -> None:
        self.trainable = bool(flag)
        self.requires_grad = bool(flag)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, group={self.group!r})"


@dataclass
class LinearSchedule:
    """Linear decay from ``base_lr`` at step 0 to 0 at ``total_steps``; no warm-up."""

    base_lr: float = 1e-4
    total_steps: int = 1

    def __call__(self, step: int) -> float:
        if self.total_steps <= 0:
            return 0.0
        return self.base_lr * max(0.0, 1.0 - step / self.total_steps)


@dataclass
class AdamW:
    params: list
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        for p in self.params:
            self.m.setdefault(p.name, np.zeros_like(p.data))
            self.v.setdefault(p.name, np.zeros_like(p.data))

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        """One decoupled-weight-decay Adam update of every trainable parameter."""
        lr = self.lr if lr is None else lr
        live = [p for p in self.params if p.trainable]
        for p in live:
            if p.grad is None:
                raise MissingGradient(p.name)
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p in live:
            g = p.grad.astype(p.data.dtype, copy=False)
            m, v = self.m[p.name], self.v[p.name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

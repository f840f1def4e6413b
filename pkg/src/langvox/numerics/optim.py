"""Parameters, momentum SGD and learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np

from .tensor import Tensor


class StateError(RuntimeError):
    pass


class Parameter(Tensor):
    """A named leaf tensor. Frozen parameters are never touched by the optimizer."""

    def __init__(self, data, name: str = "", frozen: bool = False):
        super().__init__(data, requires_grad=not frozen)
        self.name = name
        self.frozen = frozen

    def freeze(self, frozen: bool = True) -> None:
        self.frozen = frozen
        self.requires_grad = not frozen
        if frozen:
            self.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, frozen={self.frozen})"


@dataclass
class SgdMomentum:
    """Momentum SGD: ``v <- mu*v + g + wd*p``, ``p <- p - lr*v``.

    ``no_decay`` decides per parameter name whether weight decay is skipped.
    """

    params: List[Parameter]
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    no_decay: Callable[[str], bool] = lambda name: False
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, skip_missing: bool = False) -> None:
        """Update every trainable parameter.

        With ``skip_missing`` a parameter that received no gradient keeps both
        its value and its velocity; otherwise a missing gradient is an error.
        """
        for p in self.params:
            if p.frozen:
                p.grad = None
                continue
            if p.grad is None and not skip_missing:
                raise StateError(f"trainable parameter {p.name!r} has no gradient")
        for p in self.params:
            if p.frozen or p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and not self.no_decay(p.name):
                g = g + self.weight_decay * p.data
            v = self.velocity.get(p.name)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[p.name] = v
            p.data = p.data - self.lr * v

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: v.copy() for name, v in self.velocity.items()}

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        self.velocity = {name: np.array(v, dtype=np.float64) for name, v in arrays.items()}


@dataclass(frozen=True)
class LrSchedule:
    kind: str = "exponential"
    base_lr: float = 0.1
    factor: float = 0.99
    power: float = 0.9
    total_steps: int = 1
    warmup_steps: int = 0
    steps_per_epoch: int = 1
    per_step: bool = False
    min_lr_ratio: float = 1e-4

    def __post_init__(self):
        if self.kind not in ("exponential", "polynomial", "cosine_with_warmup"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.base_lr <= 0 or self.total_steps < 1 or self.warmup_steps < 0 or self.steps_per_epoch < 1:
            raise ValueError("invalid schedule parameters")


def schedule_lr(s: LrSchedule, step: int) -> float:
    if step < 0 or step > s.total_steps:
        raise ValueError(f"step {step} outside [0, {s.total_steps}]")
    floor = s.base_lr * s.min_lr_ratio
    if s.kind == "exponential":
        # decay once per epoch unless per_step is requested
        exponent = step if s.per_step else step // s.steps_per_epoch
        lr = s.base_lr * s.factor ** exponent
    elif s.kind == "polynomial":
        lr = s.base_lr * (1.0 - step / s.total_steps) ** s.power
    else:
        if step < s.warmup_steps:
            return s.base_lr * (step + 1) / s.warmup_steps
        span = max(s.total_steps - s.warmup_steps, 1)
        progress = (step - s.warmup_steps) / span
        lr = s.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
    return max(lr, floor)


def named(params: Iterable[Parameter]) -> Dict[str, Parameter]:
    return {p.name: p for p in params}


__all__ = ["Parameter", "SgdMomentum", "LrSchedule", "schedule_lr", "StateError", "named"]

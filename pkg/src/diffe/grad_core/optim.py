"""RMSProp and the triangular cyclic learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..errors import ConfigurationError, DimensionError, TrainingError
from .value import NDValue


@dataclass
class RmsPropState:
    accumulator: np.ndarray
    decay: float = 0.99
    epsilon: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ConfigurationError(f"RMSProp decay must lie in (0, 1), got {self.decay}")
        if self.epsilon <= 0:
            raise ConfigurationError("RMSProp epsilon must be positive")

    @classmethod
    def for_param(cls, param: NDValue, decay: float = 0.99, epsilon: float = 1e-8) -> "RmsPropState":
        return cls(np.zeros_like(param.data), decay, epsilon)


def rmsprop_step(param: NDValue, grad: np.ndarray, state: RmsPropState, lr: float,
                 step: int | None = None) -> tuple[NDValue, RmsPropState]:
    """One in-place RMSProp update.

    v <- decay * v + (1 - decay) * g**2
    p <- p - lr * g / (sqrt(v) + epsilon)
    """
    grad = np.asarray(grad)
    if grad.shape != param.shape or state.accumulator.shape != param.shape:
        raise DimensionError(
            f"rmsprop_step: param {param.shape}, grad {grad.shape}, state {state.accumulator.shape} must agree")
    if not np.all(np.isfinite(grad)):
        where = "" if step is None else f" at step {step}"
        raise TrainingError(f"non-finite gradient{where}")
    v = state.accumulator
    v *= state.decay
    v += (1.0 - state.decay) * grad * grad
    param.data -= (lr * grad / (np.sqrt(v) + state.epsilon)).astype(param.data.dtype, copy=False)
    return param, state


class RMSProp:
    """RMSProp over a fixed parameter list; learning rate is supplied per step."""

    def __init__(self, params: Iterable[NDValue], decay: float = 0.99, epsilon: float = 1e-8):
        self.params = list(params)
        self.states = [RmsPropState.for_param(p, decay, epsilon) for p in self.params]
        self.steps = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        for p, s in zip(self.params, self.states):
            if p.grad is None:
                continue
            rmsprop_step(p, p.grad, s, lr, step=self.steps)
        self.steps += 1


@dataclass(frozen=True)
class CyclicLr:
    base_lr: float = 9e-5
    max_lr: float = 1.5e-3
    step_size: int = 2000
    policy: str = "triangular"

    def __post_init__(self):
        if self.base_lr > self.max_lr:
            raise ConfigurationError("cyclic lr: base_lr must not exceed max_lr")
        if self.step_size < 1:
            raise ConfigurationError("cyclic lr: step_size must be a positive integer")
        if self.policy != "triangular":
            raise ConfigurationError(f"cyclic lr: unsupported policy {self.policy!r}")


def cyclic_lr(step: int, sched: CyclicLr) -> float:
    """Triangular schedule: base -> max over ``step_size`` steps, then back."""
    if step < 0:
        raise ConfigurationError("cyclic lr: step must be non-negative")
    cycle = math.floor(1 + step / (2 * sched.step_size))
    x = abs(step / sched.step_size - 2 * cycle + 1)
    return sched.base_lr + (sched.max_lr - sched.base_lr) * max(0.0, 1.0 - x)

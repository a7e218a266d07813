"""
Adam optimizer and step learning-rate schedule.
"""

import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np

from .config import ConfigError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """First/second moment estimates for one parameter plus the shared step count."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-4

    @classmethod
    def zeros_like(cls, param: np.ndarray, **kwargs) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), **kwargs)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """
    Apply one bias-corrected Adam update to `param` in place.

    Returns:
        The updated parameter array (same object as `param`)
    """
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    param -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param


def step_lr(epoch: int, base_lr: float = 1e-4, gamma: float = 0.8, step: int = 20) -> float:
    """Learning rate for a 0-based epoch: base_lr * gamma ** (epoch // step)."""
    if step < 1:
        raise ConfigError(f"step_lr: step must be >= 1, got {step}")
    return base_lr * gamma ** (epoch // step)


class Adam:
    """Adam over a named parameter set."""

    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ConfigError(f"Adam: lr must be > 0, got {lr}")
        self.params = dict(params)
        self.states: Dict[str, AdamState] = {
            name: AdamState.zeros_like(p.data, beta1=beta1, beta2=beta2, eps=eps, lr=lr)
            for name, p in self.params.items()
        }
        self._lr = lr

    @property
    def lr(self) -> float:
        return self._lr

    @lr.setter
    def lr(self, value: float) -> None:
        self._lr = value
        for state in self.states.values():
            state.lr = value

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, skip_missing: bool = False) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                if skip_missing:
                    continue
                raise ValueError(f"Adam: parameter '{name}' has no gradient")
            if p.grad.shape != p.data.shape:
                raise ValueError(
                    f"Adam: gradient shape {p.grad.shape} differs from parameter '{name}' {p.data.shape}"
                )
            adam_step(p.data, p.grad, self.states[name])

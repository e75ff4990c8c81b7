"""Adam and plain SGD over dictionaries of numpy arrays."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping, MutableMapping

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: MutableMapping[Hashable, np.ndarray], grads: Mapping[Hashable, np.ndarray]) -> None:
        """In-place bias-corrected Adam update of every key present in ``grads``."""
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k], dtype=np.float64)
                self.v[k] = np.zeros_like(params[k], dtype=np.float64)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            params[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + self.epsilon)


@dataclass
class SGDState:
    lr: float = 1e-2
    step_count: int = 0

    def step(self, params, grads) -> None:
        self.step_count += 1
        for k, g in grads.items():
            params[k] = params[k] - self.lr * g


def make_optimizer(kind: str, lr: float):
    if kind == "adam":
        return AdamState(lr=lr)
    if kind == "sgd":
        return SGDState(lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}")

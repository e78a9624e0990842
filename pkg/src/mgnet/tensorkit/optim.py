from __future__ import annotations

from typing import Iterable

import numpy as np

from ..errors import ContractError
from .tensor import Parameter


def sgd_step(params: Iterable[Parameter], lr: float) -> None:
    """Plain gradient descent ``p <- p - lr * grad``, then clear the gradients."""
    params = list(params)
    missing = [p.name or repr(p) for p in params if p.grad is None]
    if missing:
        raise ContractError(f"no gradient for parameter(s): {', '.join(missing)}")
    for p in params:
        if lr:
            p.data = p.data - lr * p.grad
        p.grad = None
    for p in params:
        if not np.all(np.isfinite(p.data)):
            raise FloatingPointError(f"parameter {p.name} became non-finite after SGD step")


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = None


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)

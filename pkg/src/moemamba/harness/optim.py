"""AdamW with bias correction and the cosine-annealed learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, ParameterError
from ..numcore import Tensor


def cosine_lr(step: int, total_iters: int, lr_start: float, lr_end: float) -> float:
    """lr_end + (lr_start - lr_end) * (1 + cos(pi * step / total_iters)) / 2."""
    if not 0 <= step <= total_iters:
        raise ParameterError(f"step {step} outside [0, {total_iters}]")
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * step / total_iters))


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def ensure(self, params: list[Tensor]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in params]
            self.v = [np.zeros_like(p.data) for p in params]
        elif len(self.m) != len(params) or any(m.shape != p.shape for m, p in zip(self.m, params)):
            raise ContractError("optimizer moments do not match the parameter list")


def adamw_step(params: list[Tensor], state: OptimizerState, lr: float, grads=None) -> None:
    """One in-place AdamW update; `grads` defaults to each parameter's ``.grad``.

    A parameter that took no part in the loss (e.g. an unrouted expert) must
    carry an explicit zero gradient.
    """
    if grads is None:
        grads = [p.grad for p in params]
    if any(g is None for g in grads):
        missing = [p.name or i for i, (p, g) in enumerate(zip(params, grads)) if g is None]
        raise ContractError(f"missing gradients for parameters {missing[:5]}")
    state.ensure(params)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if state.weight_decay:
            p.data *= p.data.dtype.type(1.0 - lr * state.weight_decay)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= (lr * update).astype(p.dtype, copy=False)

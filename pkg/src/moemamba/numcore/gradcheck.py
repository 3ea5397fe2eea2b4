"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ParameterError
from .tensor import Record, Tensor, backward, no_record


def numeric_grad(f: Callable[[], Tensor], p: Tensor, step: float) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every element of `p`."""
    flat = p.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    with no_record():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f().data.item()
            flat[i] = orig - step
            down = f().data.item()
            flat[i] = orig
            out[i] = (up - down) / (2 * step)
    return out.reshape(p.shape)


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-6) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    The error of one parameter tensor is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-12)``;
    the result is the maximum over tensors.  Parameters must be float64.
    """
    if not 1e-6 <= step <= 1e-4:
        raise ParameterError(f"grad_check step must lie in [1e-6, 1e-4], got {step}")
    for p in params:
        if p.dtype != np.float64:
            raise ParameterError(f"grad_check needs float64 parameters, got {p.dtype}")
    with Record() as rec:
        loss = f()
    grads = backward(loss, rec, accumulate=False)
    worst = 0.0
    for p in params:
        analytic = grads.get(p, np.zeros_like(p.data))
        numeric = numeric_grad(f, p, step)
        scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
        worst = max(worst, float(np.abs(analytic - numeric).max(initial=0.0) / scale))
    return worst

"""Parameter containers.

A `Module` owns parameter tensors and child modules as plain attributes;
`named_parameters` walks them in attribute-definition order, which fixes
the checkpoint tensor order.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _walk(value, path: str):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=path + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{path}.{i}")
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk(item, f"{path}.{key}")


def param(arr: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(arr, requires_grad=True, name=name, dtype=arr.dtype)


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)), used for every conv/linear weight and bias."""
    bound = 1.0 / np.sqrt(fan_in)
    return param(rng.uniform(-bound, bound, size=shape).astype(dtype))


def ones(shape, dtype) -> Tensor:
    return param(np.ones(shape, dtype=dtype))


def zeros(shape, dtype) -> Tensor:
    return param(np.zeros(shape, dtype=dtype))

"""Dense tensors and the define-by-run computation record.

Layout convention for image-like data is (batch, channel, height, width),
row-major.  Every primitive allocates a fresh output; when a `Record` is
active and any input requires a gradient, the primitive appends a node to
the record so that `backward` can replay it in reverse.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NumericError

DEFAULT_DTYPE = np.float32


class Tensor:
    """A numpy buffer plus optional gradient.

    Arithmetic operators dispatch to the differentiable primitives in
    `moemamba.numcore.ops`.  Equality is identity, so tensors can key dicts.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else _infer_dtype(data), copy=True)
        arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; implementations live in ops to avoid a circular import
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)


def _infer_dtype(data):
    if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
        return data.dtype
    if isinstance(data, Tensor):
        return data.dtype
    return DEFAULT_DTYPE


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap a scalar/array as a constant tensor; tensors pass through."""
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = x.dtype if isinstance(x, np.ndarray) and np.issubdtype(x.dtype, np.floating) else DEFAULT_DTYPE
    return Tensor._wrap(np.ascontiguousarray(np.asarray(x, dtype=dtype)))


@dataclass
class Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


class Record:
    """Ordered log of executed primitives (the tape).

    Use as a context manager; primitives run inside the ``with`` block are
    appended in execution order, which is a valid topological order.  A
    record may be consumed by `backward` once.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def __enter__(self) -> "Record":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise ContractError("record stack corrupted: nested records must exit in LIFO order")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)


_local = threading.local()


def _stack() -> list[Record]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def current_record() -> Record | None:
    stack = _stack()
    return stack[-1] if stack else None


class no_record:
    """Suspend recording inside a block (e.g. finite-difference probes)."""

    def __enter__(self):
        self._saved = list(_stack())
        _stack().clear()

    def __exit__(self, *exc):
        _stack().extend(self._saved)


def check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op}: produced non-finite values")


def emit(op: str, out: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Finalize a primitive: finiteness check, wrap, and (maybe) record.

    `vjp` maps the output cotangent to one cotangent per input (None for
    inputs that do not need one).
    """
    check_finite(out, op)
    rec = current_record()
    track = rec is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad=track)
    if track:
        rec.nodes.append(Node(tuple(inputs), result, vjp, op))
    return result


def backward(loss: Tensor, record: Record, accumulate: bool = True) -> dict[Tensor, np.ndarray]:
    """Reverse pass over `record` starting from a scalar `loss`.

    Returns a map from every leaf tensor with ``requires_grad`` that the loss
    depends on to its gradient.  With ``accumulate=True`` (default) the
    gradients are also added into each leaf's ``.grad``; call `zero_grad`
    between steps.  A record can only be replayed once.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if record.consumed:
        raise ContractError("record already consumed by a previous backward")
    record.consumed = True

    produced = {id(n.output) for n in record.nodes}
    cot: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}

    for node in reversed(record.nodes):
        g = cot.pop(id(node.output), None)
        if g is None:
            continue
        grads = node.vjp(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key not in produced:
                leaves[key] = inp
            if key in cot:
                cot[key] = cot[key] + gi
            else:
                cot[key] = gi

    out: dict[Tensor, np.ndarray] = {}
    for key, leaf in leaves.items():
        g = cot.get(key)
        if g is None:
            continue
        g = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
        out[leaf] = g
        if accumulate:
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    return out


def zero_grad(params) -> None:
    for p in params:
        p.grad = None

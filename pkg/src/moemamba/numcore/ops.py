"""Differentiable primitives.

Each function takes tensors (or scalars/arrays, treated as constants),
computes the forward value with numpy, and registers a vector-Jacobian
product through `emit`.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NumericError, ParameterError, ShapeError
from .tensor import Tensor, as_tensor, emit


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, as_tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return as_tensor(a, dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast cotangent back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --- elementwise binary -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data
    return emit("add", out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data
    return emit("sub", out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return emit("mul", out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    if np.any(b.data == 0):
        raise NumericError("div: division by zero")
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return emit("div", out, (a, b), vjp)


# --- elementwise unary --------------------------------------------------------

def neg(x) -> Tensor:
    x = as_tensor(x)
    return emit("neg", -x.data, (x,), lambda g: (-g,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return emit("exp", out, (x,), lambda g: (g * out,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise NumericError("sqrt: negative input")
    out = np.sqrt(x.data)

    def vjp(g):
        with np.errstate(divide="ignore"):
            return (g * 0.5 / out,)

    return emit("sqrt", out, (x,), vjp)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # two-branch form: exp never sees a large positive argument
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return emit("sigmoid", s, (x,), lambda g: (g * s * (1 - s),))


def silu(x) -> Tensor:
    """x * sigmoid(x)."""
    x = as_tensor(x)
    s = _sigmoid(x.data)
    out = x.data * s
    return emit("silu", out, (x,), lambda g: (g * (s * (1 + x.data * (1 - s))),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return emit("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    v = x.data
    out = np.maximum(v, 0) + np.log1p(np.exp(-np.abs(v)))
    return emit("softplus", out.astype(x.dtype, copy=False), (x,), lambda g: (g * _sigmoid(v),))


def clamp(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    out = np.clip(x.data, lo, hi)
    mask = (x.data >= lo) & (x.data <= hi)
    return emit("clamp", out, (x,), lambda g: (g * mask,))


# --- reductions and shape ops --------------------------------------------------

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.dtype)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return emit("sum", out, (x,), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims), dtype=x.dtype)
    count = x.size // max(out.size, 1)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype),)

    return emit("mean", out, (x,), vjp)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc
    return emit("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return emit("transpose", out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def permute_axis(x, perm: np.ndarray, axis: int) -> Tensor:
    """Reorder entries along `axis` by the permutation `perm`."""
    x = as_tensor(x)
    perm = np.asarray(perm)
    if perm.shape != (x.shape[axis],):
        raise ShapeError(f"permute_axis: permutation length {perm.shape} vs axis size {x.shape[axis]}")
    inv = np.argsort(perm)
    out = np.take(x.data, perm, axis=axis)
    return emit("permute_axis", out, (x,), lambda g: (np.take(g, inv, axis=axis),))


def gather_rows(x, index) -> Tensor:
    """Select batch rows ``x[index]`` along axis 0."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    out = x.data[index]

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return emit("gather_rows", out, (x,), vjp)


def scatter_rows(x, index, n: int) -> Tensor:
    """Place rows of `x` at positions `index` of an n-row zero tensor."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if len(set(index.tolist())) != len(index):
        raise ParameterError("scatter_rows: duplicate destination rows")
    out = np.zeros((n,) + x.shape[1:], dtype=x.dtype)
    out[index] = x.data
    return emit("scatter_rows", out, (x,), lambda g: (g[index],))


def crop2d(x, height: int, width: int) -> Tensor:
    """Keep the top-left ``height x width`` window of an NCHW tensor."""
    x = as_tensor(x)
    out = np.ascontiguousarray(x.data[:, :, :height, :width])

    def vjp(g):
        full = np.zeros_like(x.data)
        full[:, :, :height, :width] = g
        return (full,)

    return emit("crop2d", out, (x,), vjp)


def upsample_nearest2x(x) -> Tensor:
    x = as_tensor(x)
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(g):
        b, c, h, w = x.shape
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return emit("upsample_nearest2x", out, (x,), vjp)


# --- neural-network primitives ------------------------------------------------

def _check_conv_args(x: Tensor, weight: Tensor, groups_ok: bool = False):
    if x.ndim != 4:
        raise ShapeError(f"conv input must be NCHW, got shape {x.shape}")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv weight must be (out, in, k, k), got {weight.shape}")


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW input with an (out, in, k, k) kernel."""
    x, weight = as_tensor(x), as_tensor(weight)
    _check_conv_args(x, weight)
    cout, cin, k, _ = weight.shape
    if x.shape[1] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, weight expects {cin}")
    if stride < 1 or padding < 0:
        raise ParameterError("conv2d: stride must be >= 1 and padding >= 0")
    b_, _, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise ShapeError(f"conv2d: padded input {hp}x{wp} smaller than kernel {k}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3]))  # (B, Ho, Wo, Cout)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # (Cout, Cin, k, k)
        if x.requires_grad:
            gcols = np.tensordot(g, weight.data, axes=([1], [0]))  # (B, Ho, Wo, Cin, k, k)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return emit("conv2d", out, inputs, vjp)


def depthwise_conv2d(x, weight, padding: int = 0) -> Tensor:
    """Per-channel 2-D correlation; weight shape (channels, 1, k, k), stride 1."""
    x, weight = as_tensor(x), as_tensor(weight)
    _check_conv_args(x, weight)
    c, one, k, _ = weight.shape
    if one != 1 or x.shape[1] != c:
        raise ShapeError(f"depthwise_conv2d: input channels {x.shape[1]} vs weight {weight.shape}")
    b_, _, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    ho, wo = xp.shape[2] - k + 1, xp.shape[3] - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError("depthwise_conv2d: padded input smaller than kernel")
    wk = weight.data[:, 0]
    out = np.zeros((b_, c, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i:i + ho, j:j + wo] * wk[None, :, i, j, None, None]

    def vjp(g):
        gx = gw = None
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            for i in range(k):
                for j in range(k):
                    gw[:, 0, i, j] = np.einsum("bchw,bchw->c", g, xp[:, :, i:i + ho, j:j + wo])
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + ho, j:j + wo] += g * wk[None, :, i, j, None, None]
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gw

    return emit("depthwise_conv2d", out, (x, weight), vjp)


def layer_norm(x, gamma, beta, eps: float = 1e-5, axis: int = 1) -> Tensor:
    """Normalize over `axis` (the channel axis for NCHW) then apply gamma/beta."""
    if eps <= 0:
        raise ParameterError(f"layer_norm: eps must be > 0, got {eps}")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axis = axis % x.ndim
    c = x.shape[axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: gamma/beta must have shape ({c},)")
    bshape = [1] * x.ndim
    bshape[axis] = c
    gm, bt = gamma.data.reshape(bshape), beta.data.reshape(bshape)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gm + bt
    others = tuple(i for i in range(x.ndim) if i != axis)

    def vjp(g):
        gx = gg = gb = None
        if x.requires_grad:
            gxhat = g * gm
            m1 = gxhat.mean(axis=axis, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=axis, keepdims=True)
            gx = rstd * (gxhat - m1 - xhat * m2)
        if gamma.requires_grad:
            gg = (g * xhat).sum(axis=others)
        if beta.requires_grad:
            gb = g.sum(axis=others)
        return gx, gg, gb

    return emit("layer_norm", out.astype(x.dtype, copy=False), (x, gamma, beta), vjp)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map over the last axis: ``x @ weight.T + bias``; weight is (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input feature size {x.shape[-1]} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            gw = g2.T @ x.data.reshape(-1, x.shape[-1])
        if bias is None:
            return gx, gw
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return emit("linear", out, inputs, vjp)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not np.isfinite(x.data).all():
        raise NumericError("softmax: non-finite input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return emit("softmax", out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))

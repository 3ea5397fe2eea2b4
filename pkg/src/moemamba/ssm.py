"""Selective state-space scanning and the state-space block (SSB).

The state matrix is diagonal and negative, ``A = -exp(A_log)``, discretized
per step as ``A_bar = exp(delta * A)`` (exact) and ``B_bar = delta * B``
(Euler).  Step sizes, input and output projections all depend on the
current input, which is what makes the scan selective.
"""

from __future__ import annotations

import enum

import numpy as np

from . import numcore as nc
from ._scan_kernels import scan_backward, scan_forward
from .errors import ParameterError, ShapeError
from .numcore import Module, Tensor, as_tensor
from .numcore.module import ones, param, uniform_fan_in, zeros
from .numcore.tensor import emit

DT_MIN, DT_MAX = 1e-3, 1e-1


class ScanDirection(enum.Enum):
    ROW_FORWARD = "row_forward"
    ROW_BACKWARD = "row_backward"
    COL_FORWARD = "col_forward"
    COL_BACKWARD = "col_backward"


ALL_DIRECTIONS = tuple(ScanDirection)


def scan_order(direction: ScanDirection, height: int, width: int) -> np.ndarray:
    """Row-major pixel indices in the order `direction` visits them."""
    grid = np.arange(height * width).reshape(height, width)
    if direction in (ScanDirection.COL_FORWARD, ScanDirection.COL_BACKWARD):
        order = grid.T.reshape(-1)
    else:
        order = grid.reshape(-1)
    if direction in (ScanDirection.ROW_BACKWARD, ScanDirection.COL_BACKWARD):
        order = order[::-1]
    return np.ascontiguousarray(order)


def flatten(x: Tensor, direction: ScanDirection) -> Tensor:
    """(B, C, H, W) -> (B, L, C) sequence in `direction` order."""
    b, c, h, w = x.shape
    seq = nc.transpose(nc.reshape(x, (b, c, h * w)), (0, 2, 1))
    return nc.permute_axis(seq, scan_order(direction, h, w), axis=1)


def unflatten(seq: Tensor, direction: ScanDirection, height: int, width: int) -> Tensor:
    b, length, c = seq.shape
    order = scan_order(direction, height, width)
    restored = nc.permute_axis(seq, np.argsort(order), axis=1)
    return nc.reshape(nc.transpose(restored, (0, 2, 1)), (b, c, height, width))


def inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class SSMParams(Module):
    """Parameters of one directional selective scan over `channels` features."""

    def __init__(self, A_log, D_skip, proj_B, proj_C, proj_delta, delta_bias):
        self.A_log = A_log
        self.D_skip = D_skip
        self.proj_B = proj_B
        self.proj_C = proj_C
        self.proj_delta = proj_delta
        self.delta_bias = delta_bias

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, d_state: int, dtype=np.float32) -> "SSMParams":
        a_log = np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (channels, 1)))
        dt = np.exp(rng.uniform(np.log(DT_MIN), np.log(DT_MAX), size=channels))
        return cls(
            A_log=param(a_log.astype(dtype)),
            D_skip=ones((channels,), dtype),
            proj_B=uniform_fan_in(rng, (d_state, channels), channels, dtype),
            proj_C=uniform_fan_in(rng, (d_state, channels), channels, dtype),
            proj_delta=uniform_fan_in(rng, (channels, channels), channels, dtype),
            delta_bias=param(inverse_softplus(dt).astype(dtype)),
        )

    @property
    def channels(self) -> int:
        return self.A_log.shape[0]

    @property
    def state_dim(self) -> int:
        return self.A_log.shape[1]


def discretize(delta, A, B_t) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold state transition and Euler input matrix.

    delta (..., C), A (C, N), B_t (..., N) -> A_bar, B_bar each (..., C, N).
    """
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ParameterError("discretize: step size delta must be > 0")
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B_t = np.asarray(B_t, dtype=np.float64)
    d = np.atleast_1d(delta)[..., :, None]
    a_bar = np.exp(d * A)
    b_bar = d * np.atleast_1d(B_t)[..., None, :]
    return a_bar, b_bar


def scan_kernel(x, delta, A, Bm, Cm, D) -> Tensor:
    """Differentiable selective scan given precomputed per-step quantities.

    x, delta: (B, L, C); A: (C, N); Bm, Cm: (B, L, N); D: (C,).
    """
    x, delta, A, Bm, Cm, D = (as_tensor(t) for t in (x, delta, A, Bm, Cm, D))
    if x.ndim != 3 or delta.shape != x.shape:
        raise ShapeError(f"scan: x {x.shape} and delta {delta.shape} must be equal (B, L, C)")
    nb, length, ch = x.shape
    ns = A.shape[1]
    if A.shape != (ch, ns) or Bm.shape != (nb, length, ns) or Cm.shape != Bm.shape or D.shape != (ch,):
        raise ShapeError("scan: inconsistent A/B/C/D shapes")
    dtype = x.dtype
    arrs = [np.ascontiguousarray(t.data, dtype=dtype) for t in (x, delta, A, Bm, Cm, D)]
    inputs = (x, delta, A, Bm, Cm, D)
    keep = nc.current_record() is not None and any(t.requires_grad for t in inputs)
    y, hs = scan_forward(*arrs, keep)

    def vjp(g):
        return scan_backward(np.ascontiguousarray(g, dtype=dtype), *arrs, hs)

    return emit("selective_scan", y, inputs, vjp)


def selective_scan(x: Tensor, params: SSMParams) -> Tensor:
    """Scan a (B, L, C) sequence with input-dependent delta, B and C."""
    x = as_tensor(x)
    if x.shape[-1] != params.channels:
        raise ShapeError(f"selective_scan: {x.shape[-1]} channels vs params {params.channels}")
    delta = nc.softplus(nc.linear(x, params.proj_delta, params.delta_bias))
    Bm = nc.linear(x, params.proj_B)
    Cm = nc.linear(x, params.proj_C)
    A = nc.neg(nc.exp(params.A_log))
    return scan_kernel(x, delta, A, Bm, Cm, params.D_skip)


def scan_2d(x: Tensor, params: dict[ScanDirection, SSMParams]) -> Tensor:
    """Sum of directional selective scans over an NCHW feature map."""
    _, _, h, w = x.shape
    total = None
    for direction, p in params.items():
        y = unflatten(selective_scan(flatten(x, direction), p), direction, h, w)
        total = y if total is None else total + y
    return total


class SSB(Module):
    """Depthwise conv -> SiLU -> 2-D selective scan -> LayerNorm."""

    def __init__(self, dconv, scans: dict[ScanDirection, SSMParams], norm_gamma, norm_beta):
        self.dconv = dconv
        self.scans = {d.value: p for d, p in scans.items()}
        self.norm_gamma = norm_gamma
        self.norm_beta = norm_beta
        self._calls = 0

    @classmethod
    def init(cls, rng, channels: int, d_state: int, dtype=np.float32,
             directions=ALL_DIRECTIONS, kernel: int = 3) -> "SSB":
        dconv = uniform_fan_in(rng, (channels, 1, kernel, kernel), kernel * kernel, dtype)
        scans = {d: SSMParams.init(rng, channels, d_state, dtype) for d in directions}
        return cls(dconv, scans, ones((channels,), dtype), zeros((channels,), dtype))

    @property
    def calls(self) -> int:
        return self._calls

    def reset_calls(self) -> None:
        self._calls = 0

    def directional(self) -> dict[ScanDirection, SSMParams]:
        return {ScanDirection(k): p for k, p in self.scans.items()}

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.dconv.shape[0]:
            raise ShapeError(f"SSB: input has {x.shape[1]} channels, block expects {self.dconv.shape[0]}")
        self._calls += 1
        k = self.dconv.shape[-1]
        y = nc.depthwise_conv2d(x, self.dconv, padding=k // 2)
        y = nc.silu(y)
        y = scan_2d(y, self.directional())
        return nc.layer_norm(y, self.norm_gamma, self.norm_beta, axis=1)

"""Finite-difference gradient suites shared by the test suite and the CLI.

Each suite returns the worst max-relative error over its cases; all run
in float64 with central differences.
"""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .metrics import charbonnier
from .model import ModelConfig, build, forward
from .moe import MMBlock, mm_block_forward
from .numcore import Tensor, grad_check
from .prior import DegradationPrior
from .ssm import SSB, scan_kernel

PRIMITIVE_TOL = 1e-6
MODEL_TOL = 1e-3
# composite blocks stack layer norms and scans; FD roundoff alone reaches ~1e-6 there
BLOCK_TOL = 1e-5

PRIMITIVE_CASES = {
    "add_broadcast": (lambda a, b: nc.sum(nc.silu(a + b)), [(3, 4), (4,)]),
    "sub_mul": (lambda a, b: nc.sum(nc.sigmoid(a - b) * a), [(2, 3), (2, 3)]),
    "div": (lambda a, b: nc.sum(a / (nc.exp(b) + 0.5)), [(3, 2), (3, 2)]),
    "sqrt_softplus": (lambda a: nc.sum(nc.sqrt(nc.softplus(a) + 0.1)), [(5,)]),
    "relu_exp": (lambda a: nc.sum(nc.exp(a) * nc.relu(a + 0.37)), [(4, 3)]),
    "mean_axis": (lambda a: nc.sum(nc.silu(nc.mean(a, axis=(2, 3)))), [(2, 3, 4, 4)]),
    "reshape_transpose": (lambda a: nc.sum(nc.silu(nc.transpose(nc.reshape(a, (3, 8)), (1, 0)))
                                           * np.arange(24.0).reshape(8, 3)), [(2, 3, 4)]),
    "permute_axis": (lambda a: nc.sum(nc.permute_axis(a, np.array([2, 0, 3, 1]), 1)
                                      * np.arange(8.0).reshape(2, 4)), [(2, 4)]),
    "gather_scatter": (lambda a: nc.sum(nc.scatter_rows(nc.gather_rows(a, [2, 0]), [1, 3], 4)
                                        * np.arange(4.0).reshape(4, 1)), [(3, 5)]),
    "crop_upsample": (lambda a: nc.sum(nc.silu(nc.crop2d(nc.upsample_nearest2x(a), 5, 3))), [(1, 2, 3, 3)]),
    "conv2d_strided": (lambda x, w, b: nc.sum(nc.silu(nc.conv2d(x, w, b, stride=2, padding=1))),
                       [(2, 2, 6, 6), (3, 2, 3, 3), (3,)]),
    "depthwise": (lambda x, w: nc.sum(nc.silu(nc.depthwise_conv2d(x, w, padding=1))), [(1, 3, 5, 4), (3, 1, 3, 3)]),
    "layer_norm": (lambda x, g, b: nc.sum(nc.silu(nc.layer_norm(x, g, b, axis=1))), [(2, 4, 3, 3), (4,), (4,)]),
    "linear": (lambda x, w, b: nc.sum(nc.silu(nc.linear(x, w, b))), [(2, 3, 5), (4, 5), (4,)]),
    "softmax": (lambda x: nc.sum(nc.softmax(x, axis=1) * np.arange(12.0).reshape(3, 4)), [(3, 4)]),
    "clamp": (lambda x: nc.sum(nc.clamp(x * 3, -1.0, 1.0) * x), [(3, 3)]),
    "charbonnier": (lambda a, b: charbonnier(a, b), [(2, 3, 4), (2, 3, 4)]),
    "selective_scan": (lambda x, d, a, b, c, s: nc.sum(scan_kernel(x, nc.softplus(d), -nc.exp(a), b, c, s)
                                                       * np.linspace(-1, 1, 30).reshape(1, 10, 3)),
                       [(1, 10, 3), (1, 10, 3), (3, 4), (1, 10, 4), (1, 10, 4), (3,)]),
}


def primitive_inputs(name: str, seed: int) -> list[Tensor]:
    _, shapes = PRIMITIVE_CASES[name]
    rng = np.random.default_rng(seed)
    params = [Tensor(rng.uniform(-1, 1, size=s), requires_grad=True) for s in shapes]
    if name == "clamp":
        # keep probes away from the kinks at |3x| = 1
        params[0].data[np.abs(np.abs(3 * params[0].data) - 1) < 1e-3] += 0.01
    return params


def primitive_error(name: str, seed: int, step: float = 1e-6) -> float:
    f = PRIMITIVE_CASES[name][0]
    params = primitive_inputs(name, seed)
    return grad_check(lambda: f(*params), params, step)


def primitives_suite(seeds=range(5)) -> float:
    return max(primitive_error(name, s) for name in PRIMITIVE_CASES for s in seeds)


def _open_scans(modules, bias=0.5):
    # the initial dt range leaves state-matrix gradients below FD noise; use O(1) steps
    for m in modules:
        for e in m.moe.experts if isinstance(m, MMBlock) else [m]:
            for s in e.scans.values():
                s.delta_bias.data[:] = bias


def ssb_suite(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    blk = SSB.init(rng, 3, 2, np.float64)
    _open_scans([blk])
    x, w = rng.normal(size=(1, 3, 3, 3)), rng.normal(size=(1, 3, 3, 3))
    return grad_check(lambda: nc.sum(blk(Tensor(x)) * w), blk.parameters(), 1e-5)


def mm_block_suite(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    blk = MMBlock.init(rng, 3, 3, 2, 3, np.float64)
    _open_scans([blk])
    blk.moe.out_proj.data *= 10  # lift the expert gradients above the residual path's roundoff
    x, w = rng.normal(size=(1, 3, 3, 3)), rng.normal(size=(1, 3, 3, 3))
    p = DegradationPrior(np.array([0.5, 0.3, 0.2]))
    unused = {id(q) for q in blk.moe.experts[2].parameters()}
    params = [q for q in blk.parameters() if id(q) not in unused]
    return grad_check(lambda: nc.sum(mm_block_forward(Tensor(x), p, blk) * w), params, 3e-5)


def tiny_model_suite(seed: int = 0, size: int = 8) -> float:
    """Every routed parameter (including delta) of the tiny config on an 8x8 input."""
    net = build(ModelConfig.tiny(), seed, np.float64)
    _open_scans(net.all_blocks())
    # shrink the reconstruction so no output pixel sits on a clamp boundary
    net.recon_w.data *= 0.1
    net.recon_b.data[:] = 0.5
    rng = np.random.default_rng(seed + 1)
    x, clean = rng.uniform(size=(1, 3, size, size)), rng.uniform(size=(1, 3, size, size))
    prior = DegradationPrior(np.array([0.7, 0.3]))

    def loss():
        out = forward(x, prior, net)
        return nc.sum((out - clean) * (out - clean))

    unused = {id(q) for q in net.bottleneck[0].moe.experts[1].parameters()}
    return grad_check(loss, [p for p in net.parameters() if id(p) not in unused], 1e-6)


SUITES = {
    "primitives": (primitives_suite, PRIMITIVE_TOL),
    "ssb": (ssb_suite, BLOCK_TOL),
    "mm_block": (mm_block_suite, BLOCK_TOL),
    "model": (tiny_model_suite, MODEL_TOL),
}


def run_suites(names=None) -> list[tuple[str, float, float, bool]]:
    rows = []
    for name in names or SUITES:
        fn, tol = SUITES[name]
        err = fn()
        rows.append((name, err, tol, err < tol))
    return rows

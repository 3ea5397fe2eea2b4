import math
import time

import numpy as np
import pytest

from moemamba import numcore as nc
from moemamba.errors import ParameterError, ShapeError
from moemamba.numcore import Tensor, grad_check
from moemamba.ssm import (ALL_DIRECTIONS, SSB, SSMParams, ScanDirection, discretize, flatten,
                          scan_2d, scan_kernel, scan_order, selective_scan, unflatten)


def naive_recurrence(x, delta, A, Bm, Cm, D):
    """Step-by-step float64 oracle; x, delta (L, C), A (C, N), Bm, Cm (L, N)."""
    length, ch = x.shape
    h = np.zeros(A.shape)
    y = np.zeros((length, ch))
    for t in range(length):
        for c in range(ch):
            for n in range(A.shape[1]):
                a_bar = math.exp(delta[t, c] * A[c, n])
                h[c, n] = a_bar * h[c, n] + delta[t, c] * Bm[t, n] * x[t, c]
            y[t, c] = sum(Cm[t, n] * h[c, n] for n in range(A.shape[1])) + D[c] * x[t, c]
    return y


def naive_selective_scan(x, p: SSMParams):
    """Oracle for the projected scan: projections in numpy, recurrence by hand."""
    out = []
    for seq in x:
        z = seq @ p.proj_delta.data.T + p.delta_bias.data
        delta = np.log1p(np.exp(z))
        out.append(naive_recurrence(seq, delta, -np.exp(p.A_log.data), seq @ p.proj_B.data.T,
                                    seq @ p.proj_C.data.T, p.D_skip.data))
    return np.stack(out)


def random_params(rng, ch, n, scale=1.0):
    p = SSMParams.init(rng, ch, n, np.float64)
    for t in (p.proj_B, p.proj_C, p.proj_delta):
        t.data *= scale
    p.D_skip.data[:] = rng.uniform(-1, 1, ch)
    p.A_log.data += rng.uniform(-0.5, 0.5, p.A_log.shape)
    return p


def test_discretize_cases():
    a_bar, b_bar = discretize(1e-12, -1.0, 2.0)
    assert a_bar.item() == pytest.approx(1.0, abs=1e-11) and abs(b_bar.item()) < 1e-11
    a_bar, _ = discretize(math.log(2), -1.0, 1.0)
    assert a_bar.item() == pytest.approx(0.5, abs=1e-15)
    _, b_bar = discretize(1.0, -1.0, 2.0)
    assert b_bar.item() == 2.0
    with pytest.raises(ParameterError):
        discretize(0.0, -1.0, 1.0)


def test_scan_counting_case():
    ones = np.ones((1, 3, 1))
    y = scan_kernel(ones, ones, np.zeros((1, 1)), ones, ones, np.zeros(1)).data
    np.testing.assert_array_equal(y.ravel(), [1.0, 2.0, 3.0])


def test_scan_memoryless_when_transition_vanishes():
    rng = np.random.default_rng(0)
    x, delta = rng.normal(size=(1, 5, 2)), rng.uniform(0.5, 1.0, (1, 5, 2))
    Bm, Cm, D = rng.normal(size=(1, 5, 3)), rng.normal(size=(1, 5, 3)), rng.normal(size=2)
    A = np.full((2, 3), -1e4)  # exp(delta * A) underflows to 0
    y = scan_kernel(x, delta, A, Bm, Cm, D).data[0]
    expect = np.einsum("tn,tc->tc", Cm[0] * Bm[0], delta[0] * x[0]) + D * x[0]
    np.testing.assert_allclose(y, expect, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_scan_matches_naive_recurrence_length_64(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, 3, 4)
    x = rng.normal(size=(2, 64, 3))
    got = selective_scan(x, p).data
    np.testing.assert_allclose(got, naive_selective_scan(x, p), rtol=0, atol=1e-10)


def test_scan_is_causal():
    rng = np.random.default_rng(1)
    p = random_params(rng, 3, 4)
    x = rng.normal(size=(1, 20, 3))
    base = selective_scan(x, p).data
    x2 = x.copy()
    x2[0, 12] += 1.0
    moved = selective_scan(x2, p).data
    assert np.array_equal(base[0, :12], moved[0, :12])
    assert not np.array_equal(base[0, 12:], moved[0, 12:])


def test_scan_time_is_linear():
    rng = np.random.default_rng(2)
    p = SSMParams.init(rng, 8, 4)
    x1 = rng.normal(size=(1, 20000, 8)).astype(np.float32)
    x2 = rng.normal(size=(1, 40000, 8)).astype(np.float32)
    selective_scan(x1[:, :10], p)

    def best(x):
        times = []
        for _ in range(5):
            t = time.perf_counter()
            selective_scan(x, p)
            times.append(time.perf_counter() - t)
        return min(times)

    assert best(x2) <= 2.5 * best(x1)


@pytest.mark.parametrize("seed", range(3))
def test_scan_gradients(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, 2, 3)
    x = Tensor(rng.normal(size=(2, 16, 2)), requires_grad=True)
    w = rng.normal(size=(2, 16, 2))
    err = grad_check(lambda: nc.sum(selective_scan(x, p) * w), [x] + p.parameters(), 1e-6)
    assert err < 1e-6


def test_scan_kernel_gradients_direct():
    rng = np.random.default_rng(9)
    ts = [Tensor(a, requires_grad=True) for a in (
        rng.normal(size=(2, 10, 3)), rng.uniform(0.05, 1.0, (2, 10, 3)), -rng.uniform(0.2, 2, (3, 4)),
        rng.normal(size=(2, 10, 4)), rng.normal(size=(2, 10, 4)), rng.normal(size=3))]
    w = rng.normal(size=(2, 10, 3))
    assert grad_check(lambda: nc.sum(scan_kernel(*ts) * w), ts, 1e-6) < 1e-6


# --- directions and 2-D scan ------------------------------------------------------

@pytest.mark.parametrize("direction", ALL_DIRECTIONS)
def test_flatten_roundtrip(direction):
    x = np.random.default_rng(3).normal(size=(2, 3, 4, 5))
    seq = flatten(Tensor(x), direction)
    assert seq.shape == (2, 20, 3)
    np.testing.assert_array_equal(unflatten(seq, direction, 4, 5).data, x)


def test_scan_orders():
    np.testing.assert_array_equal(scan_order(ScanDirection.ROW_FORWARD, 2, 3), [0, 1, 2, 3, 4, 5])
    np.testing.assert_array_equal(scan_order(ScanDirection.ROW_BACKWARD, 2, 3), [5, 4, 3, 2, 1, 0])
    np.testing.assert_array_equal(scan_order(ScanDirection.COL_FORWARD, 2, 3), [0, 3, 1, 4, 2, 5])
    np.testing.assert_array_equal(scan_order(ScanDirection.COL_BACKWARD, 2, 3), [5, 2, 4, 1, 3, 0])


def four_params(rng, ch, n):
    return {d: random_params(rng, ch, n) for d in ALL_DIRECTIONS}


def oracle_scan_2d(x, params):
    b, c, h, w = x.shape
    total = np.zeros_like(x)
    for d, p in params.items():
        order = scan_order(d, h, w)
        seq = x.reshape(b, c, h * w)[:, :, order].transpose(0, 2, 1)
        y = naive_selective_scan(seq, p).transpose(0, 2, 1)
        back = np.empty_like(y)
        back[:, :, order] = y
        total += back.reshape(b, c, h, w)
    return total


def test_scan_2d_single_pixel():
    rng = np.random.default_rng(4)
    params = four_params(rng, 2, 3)
    x = rng.normal(size=(1, 2, 1, 1))
    expect = sum(naive_selective_scan(x.reshape(1, 1, 2), p) for p in params.values())
    np.testing.assert_allclose(scan_2d(Tensor(x), params).data.reshape(1, 1, 2), expect, atol=1e-12)


def test_scan_2d_row_forward_causality():
    rng = np.random.default_rng(5)
    p = random_params(rng, 2, 3)
    p.D_skip.data[:] = 0
    x = np.zeros((1, 2, 4, 4))
    x[0, :, 2, 1] = [0.7, -1.3]
    y = scan_2d(Tensor(x), {ScanDirection.ROW_FORWARD: p}).data
    flat = y.reshape(1, 2, 16)
    pos = 2 * 4 + 1
    assert np.all(flat[:, :, :pos] == 0)
    assert np.any(flat[:, :, pos:] != 0)


def test_scan_2d_matches_directional_oracles():
    rng = np.random.default_rng(6)
    params = four_params(rng, 3, 4)
    x = rng.normal(size=(2, 3, 4, 4))
    np.testing.assert_allclose(scan_2d(Tensor(x), params).data, oracle_scan_2d(x, params), atol=1e-10)


def test_scan_2d_equivariant_under_pixel_order_reversal():
    rng = np.random.default_rng(7)
    params = four_params(rng, 2, 3)
    x = rng.normal(size=(1, 2, 3, 5))
    swap = {ScanDirection.ROW_FORWARD: ScanDirection.ROW_BACKWARD,
            ScanDirection.ROW_BACKWARD: ScanDirection.ROW_FORWARD,
            ScanDirection.COL_FORWARD: ScanDirection.COL_BACKWARD,
            ScanDirection.COL_BACKWARD: ScanDirection.COL_FORWARD}
    swapped = {swap[d]: p for d, p in params.items()}

    def reverse_rows(a):
        # reverse the row-major pixel sequence (a 180 degree rotation)
        return a[:, :, ::-1, ::-1].copy()

    lhs = scan_2d(Tensor(reverse_rows(x)), swapped).data
    rhs = reverse_rows(scan_2d(Tensor(x), params).data)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


# --- SSB ----------------------------------------------------------------------------

def test_ssb_zero_input_gives_beta():
    rng = np.random.default_rng(8)
    blk = SSB.init(rng, 4, 3, np.float64)
    blk.norm_beta.data[:] = [0.1, 0.2, -0.3, 0.4]
    out = blk(Tensor(np.zeros((1, 4, 5, 5)))).data
    np.testing.assert_array_equal(out, np.broadcast_to(blk.norm_beta.data[None, :, None, None], out.shape))


def test_ssb_deterministic_and_matches_stagewise_replay():
    rng = np.random.default_rng(9)
    blk = SSB.init(rng, 3, 4, np.float64)
    x = Tensor(rng.normal(size=(2, 3, 4, 5)))
    a, b = blk(x).data, blk(x).data
    assert np.array_equal(a, b)
    y = nc.depthwise_conv2d(x, blk.dconv, padding=1)
    y = nc.silu(y)
    y = scan_2d(y, blk.directional())
    y = nc.layer_norm(y, blk.norm_gamma, blk.norm_beta, axis=1)
    assert np.array_equal(a, y.data)


def test_ssb_channel_mismatch():
    blk = SSB.init(np.random.default_rng(0), 3, 2)
    with pytest.raises(ShapeError):
        blk(Tensor(np.zeros((1, 4, 3, 3), dtype=np.float32)))


def test_ssb_gradients():
    rng = np.random.default_rng(10)
    blk = SSB.init(rng, 3, 2, np.float64)  # LN over 2 channels is constant-magnitude
    for p in blk.scans.values():
        p.delta_bias.data[:] = 0.5  # init dt makes A-gradients tiny next to FD noise
    x = rng.normal(size=(1, 3, 3, 3))
    w = rng.normal(size=(1, 3, 3, 3))
    assert grad_check(lambda: nc.sum(blk(Tensor(x)) * w), blk.parameters(), 1e-5) < 1e-6


def test_ssm_param_invariants():
    rng = np.random.default_rng(11)
    p = SSMParams.init(rng, 5, 6)
    A = -np.exp(p.A_log.data.astype(np.float64))
    np.testing.assert_allclose(A[0], -np.arange(1, 7), rtol=1e-6)
    x = rng.normal(size=(1, 30, 5)) * 10
    delta = np.log1p(np.exp(x @ p.proj_delta.data.T + p.delta_bias.data))
    a_bar = np.exp(delta[..., None] * A)
    assert np.all(delta > 0) and np.all((a_bar > 0) & (a_bar < 1))
    init_dt = np.log1p(np.exp(p.delta_bias.data))
    assert np.all((init_dt >= 1e-3 * 0.999) & (init_dt <= 1e-1 * 1.001))

"""Prior-routed mixture of SSB experts and the MM block built around it."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from . import numcore as nc
from .errors import ConfigurationError, ParameterError, ShapeError
from .numcore import Module, Tensor
from .numcore.module import ones, uniform_fan_in, zeros
from .prior import DegradationPrior
from .ssm import ALL_DIRECTIONS, SSB


def top_k_select(prior, k: int) -> list[int]:
    """Indices of the k largest probabilities, descending; ties go to the lower index."""
    probs = np.asarray(prior.probs if isinstance(prior, DegradationPrior) else prior, dtype=np.float64)
    if not 1 <= k <= probs.size:
        raise ParameterError(f"top_k_select: K={k} outside [1, {probs.size}]")
    order = np.lexsort((np.arange(probs.size), -probs))
    return [int(i) for i in order[:k]]


def channel_linear(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """Apply a linear layer to the channel vector at every pixel of an NCHW map."""
    y = nc.linear(nc.transpose(x, (0, 2, 3, 1)), weight, bias)
    return nc.transpose(y, (0, 3, 1, 2))


def _as_priors(priors, batch: int) -> list[DegradationPrior]:
    if isinstance(priors, DegradationPrior):
        return [priors] * batch
    priors = list(priors)
    if len(priors) != batch:
        raise ShapeError(f"{len(priors)} priors for a batch of {batch}")
    return priors


def routing(priors: Sequence[DegradationPrior], n_experts: int, k: int) -> dict[int, list[tuple[int, float]]]:
    """Map expert index -> [(batch row, gate weight)] for every selected expert.

    Selected experts whose weight is exactly zero are dropped: their term is
    identically zero, so a one-hot prior runs exactly one expert for any K.
    """
    plan: dict[int, list[tuple[int, float]]] = {}
    for row, p in enumerate(priors):
        if n_experts == 1:
            plan.setdefault(0, []).append((row, 1.0))
            continue
        if len(p) != n_experts:
            raise ConfigurationError(f"prior has {len(p)} levels but block has {n_experts} experts")
        for e in top_k_select(p, k):
            if p.probs[e] != 0.0:
                plan.setdefault(e, []).append((row, float(p.probs[e])))
    return plan


def tk_combine(x: Tensor, priors, experts: Sequence[SSB], k: int) -> Tensor:
    """Top-K prior-weighted sum of expert outputs (raw, un-renormalized weights).

    Only selected experts run; each runs once on the batch rows routed to it.
    A single expert ignores the prior and gets weight 1.
    """
    batch = x.shape[0]
    priors = _as_priors(priors, batch)
    plan = routing(priors, len(experts), k)
    total = None
    for e in sorted(plan):
        rows = [r for r, _ in plan[e]]
        weights = np.array([w for _, w in plan[e]], dtype=x.dtype).reshape(-1, 1, 1, 1)
        if len(rows) == batch and rows == list(range(batch)):
            term = experts[e](x) * weights
        else:
            term = nc.scatter_rows(experts[e](nc.gather_rows(x, rows)) * weights, rows, batch)
        total = term if total is None else total + term
    return total


class MoEBlock(Module):
    def __init__(self, experts: list[SSB], gate_proj, gate_bias, value_proj, value_bias,
                 out_proj, out_bias, k: int):
        if not 1 <= k <= len(experts):
            raise ConfigurationError(f"MoEBlock: K={k} must lie in [1, {len(experts)}]")
        self.experts = experts
        self.gate_proj, self.gate_bias = gate_proj, gate_bias
        self.value_proj, self.value_bias = value_proj, value_bias
        self.out_proj, self.out_bias = out_proj, out_bias
        self._k = k

    @property
    def k(self) -> int:
        return self._k

    @classmethod
    def init(cls, rng, channels: int, n_experts: int, k: int, d_state: int,
             dtype=np.float32, directions=ALL_DIRECTIONS) -> "MoEBlock":
        def lin():
            return (uniform_fan_in(rng, (channels, channels), channels, dtype),
                    uniform_fan_in(rng, (channels,), channels, dtype))
        gate, value, out = lin(), lin(), lin()
        experts = [SSB.init(rng, channels, d_state, dtype, directions) for _ in range(n_experts)]
        return cls(experts, *gate, *value, *out, k=k)


def moe_block_forward(f_ln: Tensor, priors, block: MoEBlock) -> Tensor:
    """out_proj( TK(gate_proj(F_ln), p) * SiLU(value_proj(F_ln)) )."""
    f_hat = channel_linear(f_ln, block.gate_proj, block.gate_bias)
    mixed = tk_combine(f_hat, priors, block.experts, block.k)
    gate = nc.silu(channel_linear(f_ln, block.value_proj, block.value_bias))
    return channel_linear(mixed * gate, block.out_proj, block.out_bias)


class ChannelAttention(Module):
    """Global average pool -> bottleneck (ReLU) -> sigmoid -> channel rescale."""

    def __init__(self, w1, b1, w2, b2):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2

    @classmethod
    def init(cls, rng, channels: int, reduction: int = 4, dtype=np.float32) -> "ChannelAttention":
        hidden = max(1, channels // reduction)
        return cls(uniform_fan_in(rng, (hidden, channels), channels, dtype),
                   uniform_fan_in(rng, (hidden,), channels, dtype),
                   uniform_fan_in(rng, (channels, hidden), hidden, dtype),
                   uniform_fan_in(rng, (channels,), hidden, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        pooled = nc.mean(x, axis=(2, 3))  # (B, C)
        z = nc.relu(nc.linear(pooled, self.w1, self.b1))
        s = nc.sigmoid(nc.linear(z, self.w2, self.b2))
        return x * nc.reshape(s, s.shape + (1, 1))


class MMBlock(Module):
    def __init__(self, pre_gamma, pre_beta, moe: MoEBlock, tail_gamma, tail_beta,
                 tail_conv_w, tail_conv_b, tail_attn: ChannelAttention):
        self.pre_gamma, self.pre_beta = pre_gamma, pre_beta
        self.moe = moe
        self.tail_gamma, self.tail_beta = tail_gamma, tail_beta
        self.tail_conv_w, self.tail_conv_b = tail_conv_w, tail_conv_b
        self.tail_attn = tail_attn

    @classmethod
    def init(cls, rng, channels: int, n_experts: int, k: int, d_state: int,
             dtype=np.float32, directions=ALL_DIRECTIONS) -> "MMBlock":
        return cls(
            ones((channels,), dtype), zeros((channels,), dtype),
            MoEBlock.init(rng, channels, n_experts, k, d_state, dtype, directions),
            ones((channels,), dtype), zeros((channels,), dtype),
            uniform_fan_in(rng, (channels, channels, 3, 3), channels * 9, dtype),
            uniform_fan_in(rng, (channels,), channels * 9, dtype),
            ChannelAttention.init(rng, channels, dtype=dtype),
        )

    @property
    def channels(self) -> int:
        return self.pre_gamma.shape[0]


def mm_block_forward(f_s: Tensor, priors, block: MMBlock) -> Tensor:
    """u = F_s + MoE(LN(F_s)); out = Attn(Conv(LN(u))) + u."""
    if f_s.shape[1] != block.channels:
        raise ShapeError(f"MM block expects {block.channels} channels, got {f_s.shape[1]}")
    f_ln = nc.layer_norm(f_s, block.pre_gamma, block.pre_beta, axis=1)
    u = f_s + moe_block_forward(f_ln, priors, block.moe)
    t = nc.layer_norm(u, block.tail_gamma, block.tail_beta, axis=1)
    t = nc.conv2d(t, block.tail_conv_w, block.tail_conv_b, padding=1)
    return block.tail_attn(t) + u

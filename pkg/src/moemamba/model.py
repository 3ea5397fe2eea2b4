"""The intensity-aware encoder-decoder dehazing network.

shallow 3x3 conv -> encoder/decoder of MM blocks (+ delta * F_s)
-> add F_s -> 3x3 reconstruction conv -> clamp to [0, 1]
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import numcore as nc
from .errors import ConfigurationError, ShapeError
from .moe import MMBlock, mm_block_forward
from .numcore import Module, Tensor, as_tensor
from .numcore.module import param, uniform_fan_in
from .prior import DegradationPrior, RatingLevelSet


@dataclass
class ModelConfig:
    levels: int = 4
    blocks: list[int] = field(default_factory=lambda: [4, 6, 6, 8])
    experts: list[int] = field(default_factory=lambda: [14, 1, 1, 14])
    topk: list[int] = field(default_factory=lambda: [7, 1, 1, 7])
    base_channels: int = 48
    channel_mult: int = 2
    d_state: int = 16
    in_channels: int = 3

    @classmethod
    def paper(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def tiny(cls) -> "ModelConfig":
        return cls(levels=1, blocks=[1], experts=[2], topk=[1], base_channels=4, d_state=4)

    def validate(self) -> "ModelConfig":
        if self.levels < 1:
            raise ConfigurationError("levels must be >= 1")
        for name in ("blocks", "experts", "topk"):
            if len(getattr(self, name)) != self.levels:
                raise ConfigurationError(f"{name} has {len(getattr(self, name))} entries for {self.levels} levels")
        for i, (h, n, k) in enumerate(zip(self.blocks, self.experts, self.topk)):
            if h < 0 or n < 1 or not 1 <= k <= n:
                raise ConfigurationError(f"level {i}: need blocks >= 0 and 1 <= K <= N, got H={h} N={n} K={k}")
        routed = {n for n in self.experts if n > 1}
        if len(routed) > 1:
            raise ConfigurationError(f"all routed levels share one prior, expert counts differ: {sorted(routed)}")
        if self.base_channels < 1 or self.channel_mult < 1 or self.d_state < 1:
            raise ConfigurationError("channel and state sizes must be positive")
        return self

    @property
    def prior_levels(self) -> int:
        """Length of the degradation prior the network consumes (1 if unrouted)."""
        return max(self.experts)

    def channels(self, level: int) -> int:
        return self.base_channels * self.channel_mult ** level

    @property
    def size_multiple(self) -> int:
        return 2 ** (self.levels - 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: (list(v) if isinstance(v, (list, tuple)) else v) for k, v in d.items()})


class MoEMambaNet(Module):
    def __init__(self, config: ModelConfig, shallow_w, shallow_b, encoder, downs, bottleneck,
                 ups, decoder, delta, recon_w, recon_b):
        self._config = config
        self.shallow_w, self.shallow_b = shallow_w, shallow_b
        self.encoder = encoder          # levels-1 lists of MMBlocks
        self.downs = downs              # levels-1 (w, b) stride-2 convs
        self.bottleneck = bottleneck    # MMBlocks at the deepest level
        self.ups = ups                  # levels-1 (w, b) convs after x2 upsampling
        self.decoder = decoder          # levels-1 lists of MMBlocks
        self.delta = delta
        self.recon_w, self.recon_b = recon_w, recon_b

    @property
    def config(self) -> ModelConfig:
        return self._config

    def all_blocks(self) -> list[MMBlock]:
        out = [b for lvl in self.encoder for b in lvl] + list(self.bottleneck)
        return out + [b for lvl in self.decoder for b in lvl]


def _conv(rng, cout, cin, dtype, k=3):
    fan = cin * k * k
    return [uniform_fan_in(rng, (cout, cin, k, k), fan, dtype), uniform_fan_in(rng, (cout,), fan, dtype)]


def build(config: ModelConfig, seed: int = 0, dtype=np.float32) -> MoEMambaNet:
    """Initialize every parameter from one seeded PCG64 stream in a fixed order."""
    cfg = config.validate()
    rng = np.random.default_rng(seed)
    ch = [cfg.channels(i) for i in range(cfg.levels)]

    def blocks(level):
        return [MMBlock.init(rng, ch[level], cfg.experts[level], cfg.topk[level], cfg.d_state, dtype)
                for _ in range(cfg.blocks[level])]

    shallow = _conv(rng, ch[0], cfg.in_channels, dtype)
    encoder, downs = [], []
    for i in range(cfg.levels - 1):
        encoder.append(blocks(i))
        downs.append(_conv(rng, ch[i + 1], ch[i], dtype))
    bottleneck = blocks(cfg.levels - 1)
    ups, decoder = [None] * (cfg.levels - 1), [None] * (cfg.levels - 1)
    for i in reversed(range(cfg.levels - 1)):
        ups[i] = _conv(rng, ch[i], ch[i + 1], dtype)
        decoder[i] = blocks(i)
    delta = param(np.ones((1,), dtype=dtype))
    recon = _conv(rng, cfg.in_channels, ch[0], dtype)
    return MoEMambaNet(cfg, *shallow, encoder, downs, bottleneck, ups, decoder, delta, *recon)


def count_parameters(net: Module) -> int:
    return int(sum(p.size for p in net.parameters()))


def mm_stack(net: MoEMambaNet, f_s: Tensor, priors) -> Tensor:
    """Encoder-decoder of MM blocks with additive skips at matching levels."""
    x = f_s
    skips = []
    for blocks, (w, b) in zip(net.encoder, net.downs):
        for blk in blocks:
            x = mm_block_forward(x, priors, blk)
        skips.append(x)
        x = nc.conv2d(x, w, b, stride=2, padding=1)
    for blk in net.bottleneck:
        x = mm_block_forward(x, priors, blk)
    for i in reversed(range(len(net.decoder))):
        w, b = net.ups[i]
        x = nc.conv2d(nc.upsample_nearest2x(x), w, b, padding=1)
        x = x + skips[i]
        for blk in net.decoder[i]:
            x = mm_block_forward(x, priors, blk)
    return x


def _coerce_priors(net: MoEMambaNet, priors):
    n = net.config.prior_levels
    if priors is None:
        if n > 1:
            raise ConfigurationError(f"network routes over {n} experts; a degradation prior is required")
        return DegradationPrior(np.ones(1))
    return priors


def forward_features(net: MoEMambaNet, image, priors) -> dict[str, Tensor]:
    """Run the network and return every named intermediate (F_s, MM, F_hat_s, F_a, out)."""
    x = as_tensor(image, dtype=net.shallow_w.dtype)
    if x.ndim != 4 or x.shape[1] != net.config.in_channels:
        raise ShapeError(f"expected (B, {net.config.in_channels}, H, W), got {x.shape}")
    m = net.config.size_multiple
    h, w = x.shape[2:]
    if h % m or w % m:
        ph, pw = (-h) % m, (-w) % m
        raise ShapeError(f"spatial size {h}x{w} not divisible by {m}; reflect-pad by ({ph}, {pw}) "
                         "or use run_padded")
    priors = _coerce_priors(net, priors)
    f_s = nc.conv2d(x, net.shallow_w, net.shallow_b, padding=1)
    mm = mm_stack(net, f_s, priors)
    f_hat = mm + net.delta * f_s
    f_a = f_hat + f_s
    out = nc.clamp(nc.conv2d(f_a, net.recon_w, net.recon_b, padding=1), 0.0, 1.0)
    return {"F_s": f_s, "MM": mm, "F_hat_s": f_hat, "F_a": f_a, "out": out}


def forward(image, priors, net: MoEMambaNet) -> Tensor:
    return forward_features(net, image, priors)["out"]


def run_padded(net: MoEMambaNet, image: np.ndarray, priors) -> np.ndarray:
    """Inference at any size: reflect-pad to the size multiple, forward, crop back."""
    img = np.asarray(image)
    squeeze = img.ndim == 3
    if squeeze:
        img = img[None]
    m = net.config.size_multiple
    h, w = img.shape[2:]
    ph, pw = (-h) % m, (-w) % m
    if ph or pw:
        mode = "reflect" if h > ph and w > pw else "symmetric"
        img = np.pad(img, ((0, 0), (0, 0), (0, ph), (0, pw)), mode=mode)
    with nc.no_record():
        out = forward(img, priors, net).data[:, :, :h, :w]
    return out[0] if squeeze else out


def default_levels(config: ModelConfig) -> RatingLevelSet:
    return RatingLevelSet.default(config.prior_levels)

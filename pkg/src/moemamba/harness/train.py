"""Training loop: random crops, per-crop prior, Charbonnier loss, AdamW + cosine.

Outputs in the run directory:

    loss.log           ``step, lr, loss`` per optimizer step (step counts from 1)
    ckpt_XXXXXXX.ckpt  parameters, optimizer moments and RNG state after step X
    last.ckpt          copy of the most recent checkpoint
    nan_dump.txt       written only when a step produces a non-finite value
"""

from __future__ import annotations

import contextlib
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .. import numcore as nc
from ..checkpoint import load_arrays, load_into, save_model
from ..errors import CheckpointError, NumericError, ParameterError
from ..hazegen import read_manifest, resolve_manifest
from ..imageio import read_image
from ..metrics import charbonnier
from ..model import ModelConfig, MoEMambaNet, build, forward
from ..prior import RatingLevelSet, estimate_prior
from .config import TrainConfig
from .optim import OptimizerState, adamw_step, cosine_lr

log = logging.getLogger(__name__)


@dataclass
class PairSet:
    ids: list[str]
    hazy: list[np.ndarray]
    clean: list[np.ndarray]
    betas: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)


def load_pairs(manifest, split: str | None = "train") -> PairSet:
    """Decode every pair of `split` (None for all) listed in the manifest."""
    path = resolve_manifest(manifest)
    records, _ = read_manifest(path)
    root = path.parent
    pairs = PairSet([], [], [])
    cache: dict[str, np.ndarray] = {}
    for r in records:
        if split is not None and r.split != split:
            continue
        if r.clean not in cache:
            cache[r.clean] = read_image(root / r.clean)
        pairs.ids.append(Path(r.hazy).stem)
        pairs.hazy.append(read_image(root / r.hazy))
        pairs.clean.append(cache[r.clean])
        pairs.betas.append(r.beta)
    if not pairs.ids:
        raise ParameterError(f"{path}: no pairs in split {split!r}")
    return pairs


def random_crop_pair(hazy: np.ndarray, clean: np.ndarray, size: int, rng: np.random.Generator):
    """The same size x size window, uniform over valid offsets, from both images."""
    if hazy.shape != clean.shape:
        raise ParameterError(f"hazy {hazy.shape} and clean {clean.shape} are not congruent")
    h, w = hazy.shape[-2:]
    if h < size or w < size:
        raise ParameterError(f"image {h}x{w} smaller than crop {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    window = (..., slice(top, top + size), slice(left, left + size))
    return hazy[window], clean[window]


@dataclass
class TrainResult:
    out_dir: Path
    losses: list[float]
    checkpoint: Path
    net: MoEMambaNet


def _save(out: Path, net, state: OptimizerState, rng, step: int, model_cfg, train_cfg) -> Path:
    extra_arrays = [(f"opt/m/{i}", m) for i, m in enumerate(state.m)]
    extra_arrays += [(f"opt/v/{i}", v) for i, v in enumerate(state.v)]
    extra = {"step": step, "train_config": train_cfg.to_dict(), "rng_state": rng.bit_generator.state,
             "optimizer": {"step": state.step, "beta1": state.beta1, "beta2": state.beta2,
                           "eps": state.eps, "weight_decay": state.weight_decay}}
    path = out / f"ckpt_{step:07d}.ckpt"
    save_model(path, net, extra_arrays, extra)
    shutil.copyfile(path, out / "last.ckpt")
    return path


def _restore(path, net, model_cfg: ModelConfig):
    header, arrays = load_arrays(path)
    if ModelConfig.from_dict(header["model_config"]) != model_cfg:
        raise CheckpointError(f"{path}: model config differs from the run's")
    load_into(net, arrays)
    extra = header["extra"]
    opt = extra["optimizer"]
    n = len(net.parameters())
    state = OptimizerState(opt["beta1"], opt["beta2"], opt["eps"], opt["weight_decay"], opt["step"],
                           [arrays[f"opt/m/{i}"].copy() for i in range(n)],
                           [arrays[f"opt/v/{i}"].copy() for i in range(n)])
    rng = np.random.default_rng()
    rng.bit_generator.state = extra["rng_state"]
    return state, rng, int(extra["step"])


def _dump_nan(out: Path, step: int, lr: float, idx, net, exc) -> None:
    lines = [f"step {step}", f"lr {lr!r}", f"batch {list(map(int, idx))}", f"error {exc}"]
    for name, p in net.named_parameters():
        finite = bool(np.isfinite(p.data).all())
        lines.append(f"{name} max|p|={np.abs(p.data).max():.6g} finite={finite}")
    (out / "nan_dump.txt").write_text("\n".join(lines) + "\n")


def train(manifest, model_cfg: ModelConfig, train_cfg: TrainConfig, out_dir, resume=None,
          levels: RatingLevelSet | None = None, deterministic: bool = False,
          pairs: PairSet | None = None) -> TrainResult:
    """Run (or resume) training; reproducible from (manifest, configs, seed)."""
    train_cfg.validate(model_cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dtype = np.dtype(train_cfg.precision)
    levels = levels or RatingLevelSet.default(model_cfg.prior_levels)
    data = pairs or load_pairs(manifest, "train")

    net = build(model_cfg, train_cfg.seed, dtype)
    params = net.parameters()
    if resume is not None:
        state, rng, start = _restore(resume, net, model_cfg)
    else:
        state = OptimizerState(train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps, train_cfg.weight_decay)
        rng = np.random.default_rng([train_cfg.seed, 1])
        start = 0

    log_path = out / "loss.log"
    kept = []
    if resume is not None and log_path.exists():
        kept = [ln for ln in log_path.read_text().splitlines() if int(ln.split(",")[0]) <= start]
    log_path.write_text("".join(ln + "\n" for ln in kept))
    losses = [float(ln.split(",")[2]) for ln in kept]

    limits = threadpool_limits(limits=1) if deterministic else contextlib.nullcontext()
    ckpt = out / "last.ckpt"
    with limits, open(log_path, "a") as log_fh:
        for step in range(start, train_cfg.total_iters):
            lr = cosine_lr(step, train_cfg.total_iters, train_cfg.lr_start, train_cfg.lr_end)
            idx = rng.integers(0, len(data), train_cfg.batch_size)
            crops = [random_crop_pair(data.hazy[i], data.clean[i], train_cfg.crop, rng) for i in idx]
            hazy = np.stack([h for h, _ in crops]).astype(dtype)
            clean = np.stack([c for _, c in crops]).astype(dtype)
            priors = [estimate_prior(h, levels, train_cfg.dc_window) for h in hazy]
            try:
                with nc.Record() as rec:
                    loss = charbonnier(clean, forward(hazy, priors, net))
                nc.backward(loss, rec)
                for p in params:
                    if p.grad is None:
                        p.grad = np.zeros_like(p.data)  # expert not routed this step
                adamw_step(params, state, lr)
                value = loss.data.item()
                if not all(np.isfinite(p.data).all() for p in params):
                    raise NumericError("non-finite parameters after update")
            except NumericError as exc:
                _dump_nan(out, step + 1, lr, idx, net, exc)
                log_fh.flush()
                raise
            finally:
                net.zero_grad()
            losses.append(value)
            log_fh.write(f"{step + 1}, {lr!r}, {value!r}\n")
            done = step + 1
            if done % train_cfg.checkpoint_every == 0 or done == train_cfg.total_iters:
                log_fh.flush()
                ckpt = _save(out, net, state, rng, done, model_cfg, train_cfg)
                log.info("step %d lr %.3g loss %.5f -> %s", done, lr, value, ckpt.name)
    return TrainResult(out, losses, ckpt, net)


def read_loss_log(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = [ln.split(",") for ln in Path(path).read_text().splitlines() if ln.strip()]
    arr = np.array([[float(v) for v in r] for r in rows]) if rows else np.zeros((0, 3))
    return arr[:, 0].astype(int), arr[:, 1], arr[:, 2]

"""Full-resolution evaluation of a checkpoint against a manifest split."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..checkpoint import load_model
from ..imageio import write_image
from ..metrics import MetricReport, psnr
from ..model import ModelConfig, MoEMambaNet, run_padded
from ..prior import RatingLevelSet, estimate_prior
from .train import PairSet, load_pairs


def dehaze(net: MoEMambaNet, hazy: np.ndarray, levels: RatingLevelSet | None = None,
           dc_window: int = 15) -> np.ndarray:
    """Prior from the full hazy image, then padded inference; (3, H, W) in [0, 1]."""
    levels = levels or RatingLevelSet.default(net.config.prior_levels)
    prior = estimate_prior(hazy, levels, dc_window)
    return run_padded(net, hazy.astype(net.shallow_w.dtype), prior)


def evaluate_pairs(net: MoEMambaNet, pairs: PairSet, levels=None, save_dir=None,
                   dc_window: int = 15) -> tuple[MetricReport, MetricReport]:
    """(dehazed report, hazy-input baseline report), one row per pair."""
    report, baseline = MetricReport(), MetricReport()
    if save_dir is not None:
        Path(save_dir).mkdir(parents=True, exist_ok=True)
    for pid, hazy, clean in zip(pairs.ids, pairs.hazy, pairs.clean):
        out = dehaze(net, hazy, levels, dc_window)
        report.add(pid, out, clean)
        baseline.add(pid, hazy, clean)
        if save_dir is not None:
            write_image(Path(save_dir) / f"{pid}.png", out)
    return report, baseline


def evaluate(manifest, checkpoint, split: str | None = "test", levels=None, save_dir=None,
             expect: ModelConfig | None = None) -> tuple[MetricReport, MetricReport]:
    net, _, _ = load_model(checkpoint, expect=expect)
    return evaluate_pairs(net, load_pairs(manifest, split), levels, save_dir)


def psnr_by_beta(net: MoEMambaNet | None, pairs: PairSet, levels=None) -> list[tuple[float, float, float, int]]:
    """Rows (beta, mean hazy PSNR, mean dehazed PSNR or nan, count) sorted by beta."""
    groups: dict[float, list[tuple[float, float]]] = {}
    for hazy, clean, beta in zip(pairs.hazy, pairs.clean, pairs.betas):
        out = psnr(dehaze(net, hazy, levels), clean) if net is not None else float("nan")
        groups.setdefault(beta, []).append((psnr(hazy, clean), out))
    return [(b, float(np.mean([h for h, _ in g])), float(np.mean([o for _, o in g])), len(g))
            for b, g in sorted(groups.items())]

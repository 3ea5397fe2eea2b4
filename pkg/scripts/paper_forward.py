#!/usr/bin/env python3
"""Build the full-size configuration, time one forward pass and a checkpoint roundtrip.

    python3 scripts/paper_forward.py [--size 256] [--checkpoint /tmp/paper.ckpt]

Expect a few minutes and ~1 GB of RAM at 256x256 on one core.
"""

import argparse
import tempfile
import time
from pathlib import Path

import numpy as np

from moemamba import numcore as nc
from moemamba.checkpoint import load_model, save_model
from moemamba.model import ModelConfig, build, count_parameters, forward
from moemamba.prior import RatingLevelSet, estimate_prior


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--checkpoint")
    args = ap.parse_args()

    cfg = ModelConfig.paper()
    t0 = time.perf_counter()
    net = build(cfg, args.seed)
    print(f"built {cfg.blocks} blocks, experts {cfg.experts}, top-k {cfg.topk}: "
          f"{count_parameters(net):,} parameters in {time.perf_counter() - t0:.1f} s")

    x = np.random.default_rng(args.seed).uniform(size=(1, 3, args.size, args.size)).astype(np.float32)
    prior = estimate_prior(x[0], RatingLevelSet.default(cfg.prior_levels))
    t0 = time.perf_counter()
    with nc.no_record():
        y = forward(x, prior, net).data
    print(f"forward {x.shape} -> {y.shape} in {time.perf_counter() - t0:.1f} s, "
          f"range [{y.min():.3f}, {y.max():.3f}]")

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(args.checkpoint or Path(tmp) / "paper.ckpt")
        t0 = time.perf_counter()
        save_model(path, net)
        loaded, _, _ = load_model(path, expect=cfg)
        same = all(np.array_equal(a.data, b.data) for a, b in zip(net.parameters(), loaded.parameters()))
        print(f"checkpoint {path.stat().st_size / 2**20:.0f} MiB roundtrip in "
              f"{time.perf_counter() - t0:.1f} s, parameters identical: {same}")


if __name__ == "__main__":
    main()

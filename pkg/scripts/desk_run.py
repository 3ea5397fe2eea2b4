#!/usr/bin/env python3
"""Desk-scale end-to-end run through the CLI: synth -> train -> eval -> plot-data.

    python3 scripts/desk_run.py --out runs/desk [--iters 2000] [--deterministic]

Writes the dataset, checkpoints, loss.log, eval.txt and two plot-data tables
(loss curve, PSNR per beta) under --out.  Evaluates on the training pairs by
default, matching the desk acceptance check; pass --split test to hold out scenes.
"""

import argparse
import sys
import time
from pathlib import Path

from moemamba.harness.cli import cli


def run(argv):
    print("$ moemamba " + " ".join(argv), flush=True)
    t0 = time.perf_counter()
    code = cli(argv)
    print(f"  -> exit {code} in {time.perf_counter() - t0:.1f} s", flush=True)
    if code:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--scenes", type=int, default=8)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--split", default="train", choices=["train", "test", "all"])
    ap.add_argument("--deterministic", action="store_true")
    args = ap.parse_args()

    out = Path(args.out)
    data, run_dir = out / "data", out / "train"
    test_fraction = "0" if args.split == "train" else "0.25"
    run(["synth", "--out", str(data), "--scenes", str(args.scenes), "--size", str(args.size),
         "--test-fraction", test_fraction])
    train = ["train", "--manifest", str(data), "--out", str(run_dir), "--iters", str(args.iters),
             "--crop", str(min(args.size, 64))]
    run(train + (["--deterministic"] if args.deterministic else []))
    ckpt = str(run_dir / "last.ckpt")
    run(["eval", "--manifest", str(data), "--checkpoint", ckpt, "--split", args.split,
         "--out", str(out / "eval.txt")])
    run(["plot-data", "--loss-log", str(run_dir / "loss.log"), "--out", str(out / "loss_curve.txt")])
    run(["plot-data", "--manifest", str(data), "--checkpoint", ckpt, "--split", args.split,
         "--out", str(out / "psnr_by_beta.txt")])
    print((out / "psnr_by_beta.txt").read_text())


if __name__ == "__main__":
    main()

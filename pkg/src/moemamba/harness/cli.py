"""Command-line entry point: ``moemamba <synth|train|eval|infer|grad-check|plot-data>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..checkpoint import load_model
from ..errors import ConfigurationError, ParameterError
from ..hazegen import SynthConfig, make_dataset
from ..imageio import read_image, write_image
from ..prior import RatingLevelSet
from .config import load_configs
from .evaluate import dehaze, evaluate, psnr_by_beta
from .train import load_pairs, read_loss_log, train

log = logging.getLogger("moemamba")


def _levels(path, net_levels: int):
    if path is None:
        return None
    levels = RatingLevelSet.load(path)
    if len(levels) != net_levels:
        raise ConfigurationError(f"{path} lists {len(levels)} levels; the network routes over {net_levels}")
    return levels


def cmd_synth(args) -> int:
    cfg = SynthConfig(scenes=args.scenes, size=args.size, seed=args.seed, depth=args.depth,
                      test_fraction=args.test_fraction, image_format=args.format,
                      betas=[float(b) for b in args.betas.split(",")] if args.betas else [])
    manifest = make_dataset(args.out, cfg, clean_dir=args.clean_dir)
    print(manifest)
    return 0


def cmd_train(args) -> int:
    overrides = {"train.total_iters": args.iters, "train.batch_size": args.batch, "train.lr_start": args.lr_start,
                 "train.lr_end": args.lr_end, "train.crop": args.crop, "train.seed": args.seed,
                 "train.checkpoint_every": args.checkpoint_every, "train.precision": args.precision}
    model_cfg, train_cfg = load_configs(args.config, overrides, model_preset=args.preset)
    levels = _levels(args.levels, model_cfg.prior_levels)
    result = train(args.manifest, model_cfg, train_cfg, args.out, resume=args.resume, levels=levels,
                   deterministic=args.deterministic)
    print(f"final loss {result.losses[-1]:.6f}; checkpoint {result.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    report, baseline = evaluate(args.manifest, args.checkpoint, None if args.split == "all" else args.split,
                                save_dir=args.save_dir)
    if args.out:
        report.write(args.out, baseline)
    m, b = report.means(), baseline.means()
    print(f"pairs {len(report)}  PSNR {m['psnr']:.3f} (hazy {b['psnr']:.3f})  "
          f"SSIM {m['ssim']:.4f} (hazy {b['ssim']:.4f})")
    return 0


def cmd_infer(args) -> int:
    net, _, _ = load_model(args.checkpoint)
    out = dehaze(net, read_image(args.input), _levels(args.levels, net.config.prior_levels))
    write_image(args.output, out)
    return 0


def cmd_grad_check(args) -> int:
    from ..gradsuite import SUITES, run_suites

    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ParameterError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)}")
    ok = True
    for name, err, tol, passed in run_suites(names):
        print(f"{'PASS' if passed else 'FAIL'} {name:<12} max rel err {err:.3e} (tol {tol:.0e})")
        ok &= passed
    return 0 if ok else 1


def cmd_plot_data(args) -> int:
    if args.loss_log is None and args.manifest is None:
        raise ParameterError("plot-data needs --loss-log and/or --manifest")
    lines = []
    if args.loss_log:
        steps, lrs, losses = read_loss_log(args.loss_log)
        lines.append("# step lr loss loss_ma10")
        for i, (s, lr, loss) in enumerate(zip(steps, lrs, losses)):
            ma = losses[max(0, i - 9):i + 1].mean()
            lines.append(f"{s} {lr:.6e} {loss:.6e} {ma:.6e}")
    if args.manifest:
        net = load_model(args.checkpoint)[0] if args.checkpoint else None
        rows = psnr_by_beta(net, load_pairs(args.manifest, None if args.split == "all" else args.split))
        lines.append("# beta psnr_hazy psnr_dehazed count")
        lines += [f"{b:.6g} {h:.4f} {d:.4f} {n}" for b, h, d, n in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moemamba", description="Intensity-aware MoE-Mamba dehazing.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a paired multi-intensity hazy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--depth", choices=["linear-ramp", "radial"], default="linear-ramp")
    p.add_argument("--betas", help="comma-separated, strictly increasing")
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--format", choices=["png", "ppm"], default="png")
    p.add_argument("--clean-dir", help="use images from this directory instead of procedural scenes")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on the manifest's train split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="runs/train")
    p.add_argument("--config")
    p.add_argument("--preset", choices=["tiny", "paper"])
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr-start", type=float)
    p.add_argument("--lr-end", type=float)
    p.add_argument("--crop", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--precision", choices=["float32", "float64"])
    p.add_argument("--levels", help="rating-level file (name = token_index per line)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--deterministic", action="store_true", help="single-threaded, bitwise reproducible")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="full-resolution metrics for a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "test", "all"])
    p.add_argument("--out", help="report file")
    p.add_argument("--save-dir", help="write dehazed PNGs here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="dehaze one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--levels")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("grad-check", help="finite-difference gradient suites")
    p.add_argument("--suite", action="append", help="repeatable; default all")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("plot-data", help="loss curve and per-beta PSNR tables as text columns")
    p.add_argument("--loss-log")
    p.add_argument("--manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="all", choices=["train", "test", "all"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot_data)
    return parser


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    np.seterr(all="ignore")
    sys.exit(cli())


if __name__ == "__main__":
    main()

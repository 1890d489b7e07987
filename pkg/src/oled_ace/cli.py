"""Command-line entry point: ``oled-ace <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import acenet
from .colorpower import PanelModel, VideoPolicy
from .pipeline import config as cfgmod
from .pipeline.data import load_images, read_image, write_image
from .pipeline.evaluation import ablate, dim_only, enhance, evaluate, parse_variants
from .pipeline.training import WEIGHTS_FILE, train
from .pipeline.video import process_video_dir

log = logging.getLogger("oled_ace")


def _rate(text: str) -> float:
    try:
        r = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= r < 1.0:
        raise argparse.ArgumentTypeError(f"rate must lie in [0, 1), got {r}")
    return r


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def _load_weights(path: str) -> acenet.AceParams:
    p = Path(path)
    if p.is_dir():
        p = p / WEIGHTS_FILE
    if not p.is_file():
        raise ValueError(f"no weights file at {path}")
    return acenet.load_params(p)


def cmd_dim(args) -> int:
    image = read_image(args.inp)
    panel = PanelModel(gamma=args.gamma)
    result = dim_only(image, args.rate, panel)
    write_image(args.out, result.image)
    print(f"R_measured {result.achieved:.6f}")
    return 0


def cmd_enhance(args) -> int:
    params = _load_weights(args.weights)
    image = read_image(args.inp)
    result = enhance(params, image, args.rate)
    write_image(args.out, result.image)
    print(f"R_measured {result.achieved:.6f}")
    return 0


def cmd_train(args) -> int:
    config = cfgmod.profile(args.profile)
    if args.config:
        config = cfgmod.load_config(args.config, config)
    config = cfgmod.TrainConfig.from_dict({**config.to_dict(), "data_dir": str(args.data)})

    def report(row):
        log.info("iter %d  l_total %.4f  heldout %.4f", row.iteration, row.l_total, row.heldout_l_total)

    ck = train(config, out_dir=args.out, on_log=report)
    print(f"trained {ck.iteration} iterations; checkpoint in {args.out}")
    return 0


def cmd_eval(args) -> int:
    params = _load_weights(args.weights)
    images = load_images(args.data)
    table = evaluate(params, images)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(args.out)
    for method, rep in table.reports.items():
        o = rep.overall
        print(f"{method}: R_measured {o.r_measured:.4f}  EME {o.eme:.3f}  NDE {o.nde:.4f}  SSIM {o.ssim:.4f}")
    return 0


def cmd_ablate(args) -> int:
    variants = parse_variants(args.variants)
    config = cfgmod.profile(args.profile)
    if args.config:
        config = cfgmod.load_config(args.config, config)
    config = cfgmod.TrainConfig.from_dict({**config.to_dict(), "data_dir": str(args.data)})
    table = ablate(config, variants)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(args.out)
    for row in table.rows:
        if row.rate == "avg":
            print(f"{row.variant}: EME {row.eme:.3f}  |R-R_measured| {row.rate_error:.4f}  SSIM {row.ssim:.4f}")
    return 0


def cmd_video(args) -> int:
    params = _load_weights(args.weights)
    records = process_video_dir(params, args.frames, args.out, VideoPolicy(rho=args.rho))
    ms = sum(r.ms for r in records) / len(records)
    print(f"{len(records)} frames, {ms:.1f} ms/frame; per-frame log in {Path(args.out) / 'frames.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oled-ace", description="Power-constrained contrast enhancement for OLED displays.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dim", help="dim an image to a power-saving rate")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--rate", type=_rate, required=True)
    p.add_argument("--gamma", type=_positive, default=2.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dim)

    p = sub.add_parser("enhance", help="dim and enhance an image with trained weights")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--rate", type=_rate, required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("train", help="train the network on a directory of PNGs")
    p.add_argument("--data", required=True)
    p.add_argument("--profile", choices=cfgmod.PROFILES, required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score weights and the dim-only baseline over the R grid")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare loss-term variants")
    p.add_argument("--data", required=True)
    p.add_argument("--variants", required=True, help="e.g. i,ii,iii,iv or iv,no_p,lc=0.5")
    p.add_argument("--profile", choices=cfgmod.PROFILES, default="desk")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("video", help="enhance a frame_NNNNNN.png sequence")
    p.add_argument("--frames", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--rho", type=_positive, default=1.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_video)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose or args.command in ("train", "ablate") else logging.WARNING,
        format="%(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"oled-ace {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

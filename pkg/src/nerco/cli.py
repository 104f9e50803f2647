"""Command line entry point: ``nerco train | infer | eval``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .datasets import iterate_eval
from .imaging import ImageTensor, UNIT_RANGE, crop_padding, load_image, save_image, to_model_range
from .metrics import MetricReport, NiqeModel, NIQE_BLOCK, loe, niqe, psnr, semantic_score, ssim
from .trainer import TrainingConfig, infer, load_checkpoint, train

log = logging.getLogger("nerco")


def _original(item) -> ImageTensor:
    data = crop_padding(item.image.data, item.pad)
    return ImageTensor(((data + 1) / 2).clamp(*UNIT_RANGE), UNIT_RANGE, "RGB")


def cmd_train(args):
    config = TrainingConfig.from_file(args.config) if args.config else TrainingConfig()
    if args.pe_levels is not None:
        config.pe_levels = args.pe_levels
    if args.seed is not None:
        config.seed = args.seed
    state = None
    if args.resume:
        state = load_checkpoint(args.resume, config)
    train(config, args.data, args.out, state=state, max_steps=args.max_steps)


def cmd_infer(args):
    state = load_checkpoint(args.ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for item in iterate_eval(args.inp):
        enhanced = infer(state, _original(item))
        save_image(enhanced, out / Path(item.name).with_suffix(".png"))
        log.info("wrote %s", item.name)


def cmd_eval(args):
    state = load_checkpoint(args.ckpt)
    niqe_model = NiqeModel.load(args.niqe_model)
    report = MetricReport()
    for item in iterate_eval(args.low):
        original = _original(item)
        enhanced = infer(state, original)
        row = {
            "loe": loe(enhanced, original),
            "semantic_score": semantic_score(to_model_range(enhanced), state.prompts, state.backend),
            "niqe": niqe(enhanced, niqe_model) if min(enhanced.height, enhanced.width) >= NIQE_BLOCK else None,
        }
        if args.ref:
            ref = load_image(Path(args.ref) / item.name)
            row["psnr"] = psnr(enhanced, ref)
            row["ssim"] = ssim(enhanced, ref)
        report.add(item.name, **row)
        log.info("%s %s", item.name, row)
    report.write_csv(args.report)
    log.info("mean %s", report.means())


def build_parser():
    parser = argparse.ArgumentParser(prog="nerco", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on <data>/low and <data>/high")
    p.add_argument("--config", help="flat YAML key/value file of TrainingConfig fields")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pe-levels", type=int, help="positional encoding frequency levels")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="enhance every image in a directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="enhance and score a directory, write a CSV report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--low", required=True)
    p.add_argument("--ref", help="reference directory with matching file names")
    p.add_argument("--report", required=True)
    p.add_argument("--niqe-model", help="NIQE pristine parameter .npz (default: bundled)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())

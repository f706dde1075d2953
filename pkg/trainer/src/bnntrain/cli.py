"""Batch entry points: synthesize IDX data, train, report accuracy."""

from __future__ import annotations

import argparse
import sys

from . import data
from .train import TrainConfig, train


def _cmd_synth(args):
    images, labels = data.make_synthetic(
        args.rows, args.cols, args.classes, args.per_class,
        noise=args.noise, seed=args.seed)
    data.write_idx_images(args.images, images)
    data.write_idx_labels(args.labels, labels)
    print("wrote %d %dx%d images -> %s, %s"
          % (len(labels), args.rows, args.cols, args.images, args.labels))


def _cmd_train(args):
    spins, labels, geometry = data.load_dataset(
        args.images, args.labels, threshold=args.threshold)
    config = TrainConfig(
        input_width=geometry[2],
        hidden_widths=tuple(args.hidden),
        class_count=int(labels.max()) + 1,
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=args.seed,
        binarization_threshold=args.threshold,
        dedup=args.dedup,
    )
    model = train(config, spins, labels, geometry)
    model.save(args.out)
    print("wrote %s  train acc %.1f%%  test acc %.1f%%"
          % (args.out, 100 * model.train_accuracy, 100 * model.test_accuracy))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnntrain")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic IDX dataset")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--rows", type=int, default=5)
    p.add_argument("--cols", type=int, default=5)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.08)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a BNN and write a weight file")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", type=int, nargs="+", default=[7])
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=int, default=data.DEFAULT_THRESHOLD)
    dd = p.add_mutually_exclusive_group()
    dd.add_argument("--dedup", dest="dedup", action="store_true", default=None)
    dd.add_argument("--no-dedup", dest="dedup", action="store_false")
    p.set_defaults(func=_cmd_train)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (OSError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

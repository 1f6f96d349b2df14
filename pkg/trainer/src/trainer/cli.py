"""Command-line training and export.

Verbs:
    train-bnn   train a binarized conv network and export it
    train-rf    train a random forest and export it

Both verbs write two JSON files: the interchange document an inference
engine can convert and load, and an eval manifest holding held-out inputs
with the exporter's own integer-semantics predictions for parity checks.

Exit codes: 0 success, 1 training or export failure (divergence, a model
the format cannot express), 2 usage (including an invalid architecture
string or config field).
"""

from __future__ import annotations

import argparse
import json
import sys

from .bnn import TrainingDivergedError, train_bnn
from .config import ConfigError, TrainConfig
from .export import ExportError, export_bnn
from .rf import export_rf, train_rf


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="ascii") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--out", required=True,
                     help="path for the interchange JSON document")
    sub.add_argument("--manifest", required=True,
                     help="path for the eval manifest JSON")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--classes", type=int, default=2)
    sub.add_argument("--timesteps", type=int, default=32)
    sub.add_argument("--channels", type=int, default=3)
    sub.add_argument("--n-train", type=int, default=512)
    sub.add_argument("--n-val", type=int, default=256)
    sub.add_argument("--n-manifest", type=int, default=1000)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ubnn-train",
        description="Train and export binarized networks and random forests.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    bnn = sub.add_parser(
        "train-bnn", help="train a binarized conv network and export it"
    )
    _add_common(bnn)
    bnn.add_argument("--arch", default=TrainConfig.architecture,
                     help='architecture string, e.g. "Conv(2,7),Pool(2,2),FC"')
    bnn.add_argument("--epochs", type=int, default=50)
    bnn.add_argument("--lr", type=float, default=0.01)
    bnn.add_argument("--batch-size", type=int, default=64)

    rf = sub.add_parser(
        "train-rf", help="train a random forest and export it"
    )
    _add_common(rf)
    rf.add_argument("--trees", type=int, default=16)
    rf.add_argument("--depth", type=int, default=8)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "train-bnn":
            config = TrainConfig(
                architecture=args.arch,
                timesteps=args.timesteps,
                channels=args.channels,
                n_classes=args.classes,
                epochs=args.epochs,
                batch_size=args.batch_size,
                learning_rate=args.lr,
                seed=args.seed,
                n_train=args.n_train,
                n_val=args.n_val,
                n_manifest=args.n_manifest,
            )
        else:
            # The forest never consults the conv architecture; a kernel-1
            # placeholder keeps the config valid for any window shape so
            # the forest's own shape rules produce the error.
            config = TrainConfig(
                architecture="Conv(2,1),FC",
                timesteps=args.timesteps,
                channels=args.channels,
                n_classes=args.classes,
                seed=args.seed,
                n_train=args.n_train,
                n_val=args.n_val,
                n_manifest=args.n_manifest,
                n_trees=args.trees,
                rf_max_depth=args.depth,
            )
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    try:
        if args.verb == "train-bnn":
            bundle = export_bnn(train_bnn(config))
            print(
                f"train accuracy {bundle.report['train_accuracy']:.3f}, "
                f"validation accuracy {bundle.report['val_accuracy']:.3f} "
                f"({bundle.report['epochs_run']} epochs)"
            )
        else:
            bundle = export_rf(train_rf(config))
            print(
                f"float validation accuracy "
                f"{bundle.report['float_val_accuracy']:.3f}, quantized "
                f"{bundle.report['quantized_val_accuracy']:.3f} "
                f"({bundle.report['n_nodes']} nodes)"
            )
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (TrainingDivergedError, ExportError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    _write_json(args.out, bundle.document)
    _write_json(args.manifest, bundle.manifest)
    print(f"wrote {args.out}")
    print(f"wrote {args.manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

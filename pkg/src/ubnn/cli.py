"""Command-line surface: inference, oracle verification, and reports.

Verbs: run, verify, footprint, ops, rf-run, rf-verify, convert. Input CSV
rows carry one window each, values row-major and time-major (t0c0, t0c1,
..., t1c0, ...), optionally followed by a label column under --labels.
Exit codes: 0 ok, 1 verification mismatch, 2 usage (including data whose
shape does not fit the model), 3 I/O failure, 4 file format or validation
failure. All output is deterministic given the inputs and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import model, oracle, rf
from .bitpack import pack
from .errors import FormatError, InterchangeError, ValidationError
from .layers import (
    I32_MAX,
    Q16_ONE,
    BinaryConvLayer,
    Direction,
    Int8ConvLayer,
    ThresholdSpec,
    predict,
)

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4


class UsageError(Exception):
    """Invocation-level problem: flags or data that do not fit the model."""


def _read_rows(path: str) -> list[list[int]]:
    """Parse a CSV of integers; all rows must have the same width."""
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    rows = []
    for ln, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rows.append([int(cell.strip()) for cell in line.split(",")])
        except ValueError:
            raise ValidationError(f"{path}: line {ln}: non-integer value") from None
    if not rows:
        raise ValidationError(f"{path}: no input rows")
    width = len(rows[0])
    for ln, row in enumerate(rows, 1):
        if len(row) != width:
            raise ValidationError(
                f"{path}: inconsistent row widths ({width} vs {len(row)})"
            )
    return rows


def _split_labels(rows, data_width, with_labels, n_classes, path):
    """Split off the trailing label column; check widths and label range."""
    want = data_width + (1 if with_labels else 0)
    if len(rows[0]) != want:
        raise UsageError(
            f"{path}: rows hold {len(rows[0])} values, expected {want}"
            + (" (including the label column)" if with_labels else "")
        )
    if not with_labels:
        return rows, None
    labels = [row[-1] for row in rows]
    for i, lab in enumerate(labels):
        if not 0 <= lab < n_classes:
            raise ValidationError(
                f"{path}: row {i + 1}: label {lab} outside [0, {n_classes})"
            )
    return [row[:-1] for row in rows], labels


def _check_int8(row, row_index, path):
    for v in row:
        if not -128 <= v <= 127:
            raise ValidationError(
                f"{path}: row {row_index + 1}: value {v} outside int8"
            )


def _model_input(net, row, row_index, path):
    spec = net.input_spec
    _check_int8(row, row_index, path)
    if spec.domain == "int8":
        return np.array(row, dtype=np.int64).reshape(spec.timesteps, spec.channels)
    for v in row:
        if v not in (-1, 1):
            raise ValidationError(
                f"{path}: row {row_index + 1}: value {v} is not -1 or +1 "
                f"(binary-domain model)"
            )
    return pack(row, (spec.timesteps, spec.channels))


def cmd_run(args) -> int:
    net = model.load(args.model)
    spec = net.input_spec
    rows = _read_rows(args.input)
    rows, labels = _split_labels(
        rows, spec.timesteps * spec.channels, args.labels, net.n_classes, args.input
    )
    correct = 0
    for i, row in enumerate(rows):
        scores = model.forward(net, _model_input(net, row, i, args.input))
        pred = predict(scores)
        if args.scores:
            print(f"{pred} " + " ".join(str(s) for s in scores))
        else:
            print(pred)
        if labels is not None and pred == labels[i]:
            correct += 1
    if labels is not None:
        print(f"accuracy: {correct}/{len(rows)}")
    return EXIT_OK


def _corrupted(net, index: int):
    """Replace channel 0 of conv layer `index` with an unsatisfiable threshold."""
    layers = list(net.layers)
    if not 0 <= index < len(layers) or not isinstance(layers[index], BinaryConvLayer):
        raise UsageError(
            f"--corrupt-threshold {index} does not name a convolution layer"
        )
    conv = layers[index]
    n = conv.k * conv.c_in
    limit = n * 128 if isinstance(conv, Int8ConvLayer) else n
    bad = ThresholdSpec(min(limit + 1, I32_MAX), Direction.GEQ)
    layers[index] = replace(conv, thresholds=(bad,) + conv.thresholds[1:])
    return model.Network(net.input_spec, tuple(layers))


def _draw_input(net, rng):
    spec = net.input_spec
    if spec.domain == "int8":
        return rng.integers(-128, 128, size=(spec.timesteps, spec.channels))
    bits = rng.integers(0, 2, size=spec.timesteps * spec.channels)
    return pack((2 * bits - 1).tolist(), (spec.timesteps, spec.channels))


def cmd_verify(args) -> int:
    net = model.load(args.model)
    engine_net = net
    if args.corrupt_threshold is not None:
        engine_net = _corrupted(net, args.corrupt_threshold)
    rng = np.random.default_rng(args.seed)
    mismatches = 0
    first = None
    for trial in range(args.trials):
        x = _draw_input(net, rng)
        stages, scores = model.forward_trace(engine_net, x)
        ostages, oscores = oracle.forward_trace_reference(net, x)
        where = None
        for si, (got, want) in enumerate(zip(stages, ostages)):
            dense = oracle.tensor_to_dense(got)
            if not np.array_equal(dense, want):
                t, c = np.argwhere(dense != np.asarray(want))[0]
                where = f"stage {si}, t={t}, c={c}"
                break
        if where is None:
            expected = [int(s * Q16_ONE) for s in oscores]
            if scores != expected or predict(scores) != oracle.predict_reference(oscores):
                where = "scores"
        if where is not None:
            mismatches += 1
            if first is None:
                first = f"trial {trial}, {where}"
    print(f"{mismatches} mismatches / {args.trials} trials")
    if first is not None:
        print(f"first mismatch: {first}")
    return EXIT_MISMATCH if mismatches else EXIT_OK


def _bits_and_bytes(bits: int) -> str:
    return f"{bits} bits ({bits / 8:g} bytes)"


def _footprint_line(label: str, lf, padded32: bool) -> str:
    parts = [
        f"raw {_bits_and_bytes(lf.raw_weight_bits)}",
        f"aligned {_bits_and_bytes(lf.aligned_weight_bits)}",
        f"thresholds {lf.threshold_bits} bits",
        f"activations {lf.activation_buffer_bits} bits",
    ]
    if padded32:
        parts.append(f"padded32 {_bits_and_bytes(lf.padded32_weight_bits)}")
        if lf.raw_weight_bits:
            ratio = (lf.padded32_weight_bits - lf.raw_weight_bits) / lf.raw_weight_bits
            parts.append(f"{ratio:g}x overhead")
    return f"{label}: " + ", ".join(parts)


def cmd_footprint(args) -> int:
    net = model.load(args.model)
    report = model.footprint(net)
    for i, lf in enumerate(report.per_layer):
        print(_footprint_line(f"layer {i} {lf.kind}", lf, args.padded32))
    print(_footprint_line("total", report, args.padded32))
    return EXIT_OK


def cmd_ops(args) -> int:
    net = model.load(args.model)
    for name, value in model.count_ops(net).as_dict().items():
        print(f"{name}: {value}")
    return EXIT_OK


def _rf_features(forest, quantizer, row, row_index, raw, path):
    _check_int8(row, row_index, path)
    if not raw:
        return row
    window = np.array(row, dtype=np.int64).reshape(
        rf.WINDOW_TIMESTEPS, rf.WINDOW_AXES
    )
    return rf.quantize_features(rf.extract_features(window), quantizer)


def cmd_rf_run(args) -> int:
    forest, quantizer = rf.load_forest(args.forest)
    if args.raw and forest.n_features != rf.N_FEATURES:
        raise UsageError(
            f"--raw extracts {rf.N_FEATURES} features, forest expects "
            f"{forest.n_features}"
        )
    rows = _read_rows(args.input)
    width = rf.WINDOW_TIMESTEPS * rf.WINDOW_AXES if args.raw else forest.n_features
    rows, labels = _split_labels(rows, width, args.labels, forest.n_classes, args.input)
    correct = 0
    for i, row in enumerate(rows):
        feats = _rf_features(forest, quantizer, row, i, args.raw, args.input)
        pred = rf.rf_predict(feats, forest)
        print(pred)
        if labels is not None and pred == labels[i]:
            correct += 1
    if labels is not None:
        print(f"accuracy: {correct}/{len(rows)}")
    return EXIT_OK


def cmd_rf_verify(args) -> int:
    forest, quantizer = rf.load_forest(args.forest)
    if args.input is not None:
        if args.raw and forest.n_features != rf.N_FEATURES:
            raise UsageError(
                f"--raw extracts {rf.N_FEATURES} features, forest expects "
                f"{forest.n_features}"
            )
        rows = _read_rows(args.input)
        width = rf.WINDOW_TIMESTEPS * rf.WINDOW_AXES if args.raw else forest.n_features
        rows, _ = _split_labels(rows, width, False, forest.n_classes, args.input)
        vectors = [
            _rf_features(forest, quantizer, row, i, args.raw, args.input)
            for i, row in enumerate(rows)
        ]
    else:
        rng = np.random.default_rng(args.seed)
        vectors = [
            [int(v) for v in rng.integers(-128, 128, size=forest.n_features)]
            for _ in range(args.trials)
        ]
    mismatches = 0
    first = None
    for i, feats in enumerate(vectors):
        got = rf.rf_predict(feats, forest)
        want = oracle.rf_predict_reference(forest, feats)
        if got != want:
            mismatches += 1
            if first is None:
                first = f"input {i}: engine {got}, oracle {want}"
    print(f"{mismatches} mismatches / {len(vectors)} trials")
    if first is not None:
        print(f"first mismatch: {first}")
    return EXIT_MISMATCH if mismatches else EXIT_OK


def cmd_convert(args) -> int:
    with open(args.input, "r", encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{args.input}: not valid JSON: {e}") from None
    kind = obj.get("kind") if isinstance(obj, dict) else None
    if kind == "network":
        data = model.save_bytes(model.network_from_json(obj))
    elif kind == "forest":
        data = rf.save_forest_bytes(*rf.forest_from_json(obj))
    else:
        raise InterchangeError(
            f"kind must be 'network' or 'forest', got {kind!r}", "kind"
        )
    with open(args.output, "wb") as f:
        f.write(data)
    print(f"wrote {args.output} ({len(data)} bytes)")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ubnn",
        description="Bit-exact binary neural network and random forest inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="classify CSV windows with a UBN1 model")
    p.add_argument("model")
    p.add_argument("input", help="CSV, one window per row, time-major")
    p.add_argument("--scores", action="store_true",
                   help="print Q16.16 scores after each prediction")
    p.add_argument("--labels", action="store_true",
                   help="treat the last column as labels and report accuracy")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="compare the packed engine to the oracle")
    p.add_argument("model")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-threshold", type=int, default=None, metavar="LAYER",
                   help="testing fixture: corrupt one conv threshold first")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("footprint", help="report model storage costs")
    p.add_argument("model")
    p.add_argument("--padded32", action="store_true",
                   help="also price channels padded to multiples of 32")
    p.set_defaults(func=cmd_footprint)

    p = sub.add_parser("ops", help="report closed-form per-inference op counts")
    p.add_argument("model")
    p.set_defaults(func=cmd_ops)

    p = sub.add_parser("rf-run", help="classify CSV rows with a URF1 forest")
    p.add_argument("forest")
    p.add_argument("input", help="CSV of quantized features (or windows with --raw)")
    p.add_argument("--raw", action="store_true",
                   help="rows are 32x3 raw windows; extract and quantize features")
    p.add_argument("--labels", action="store_true",
                   help="treat the last column as labels and report accuracy")
    p.set_defaults(func=cmd_rf_run)

    p = sub.add_parser("rf-verify", help="compare forest engine to the recursive oracle")
    p.add_argument("forest")
    p.add_argument("--input", default=None, help="optional CSV of inputs")
    p.add_argument("--raw", action="store_true")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_rf_verify)

    p = sub.add_parser("convert", help="convert interchange JSON to UBN1/URF1")
    p.add_argument("input", help="interchange JSON file")
    p.add_argument("output", help="binary output path")
    p.set_defaults(func=cmd_convert)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as e:
        print(f"error ({e.code}): {e}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as e:
        print(f"error (io): {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

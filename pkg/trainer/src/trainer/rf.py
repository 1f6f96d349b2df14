"""Random-forest training, flattening, and quantized export.

The classifier trains in float on seven hand-defined features per axis
(average, population variance, energy, max, min, peak-to-peak, strict
zero crossings — axis-major, feature ``j`` of axis ``a`` at index
``a * 7 + j``).  Export then quantizes the world to 8 bits: a per-feature
affine quantizer calibrated from the training features, node thresholds
mapped through it, and leaf class counts renormalized to unsigned bytes
summing to 255.

Flattening uses the implicit-left-child layout: a node's left child is
the next array slot, only the right child is stored, and a leaf stores
``-1`` as its feature index with its right-child field indexing the leaf
payload table.  Every feature value is an exact dyadic rational, so
quantization runs in exact rational arithmetic and two independent
implementations of this pipeline agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .config import ConfigError
from .data import make_dataset
from .export import ExportBundle, ExportError, INTERCHANGE_VERSION, build_manifest

WINDOW_TIMESTEPS = 32
WINDOW_AXES = 3
FEATURES_PER_AXIS = 7
N_FEATURES = WINDOW_AXES * FEATURES_PER_AXIS
LEAF_SUM = 255
MAX_U16 = 0xFFFF
I8_MIN, I8_MAX = -128, 127


# --- features ----------------------------------------------------------------


def extract_features_batch(windows: np.ndarray) -> np.ndarray:
    """(n, 32, 3) integer windows -> (n, 21) float64 features, axis-major.

    Every value is an exact dyadic rational (sums of int8 samples divided
    by powers of two), so float64 holds it exactly.
    """
    x = np.asarray(windows)
    if x.ndim != 3 or x.shape[1:] != (WINDOW_TIMESTEPS, WINDOW_AXES):
        raise ValueError(
            f"windows shaped {x.shape}, expected "
            f"(n, {WINDOW_TIMESTEPS}, {WINDOW_AXES})"
        )
    if not np.issubdtype(x.dtype, np.integer):
        raise ValueError("windows must hold integer samples")
    if x.size and (x.min() < I8_MIN or x.max() > I8_MAX):
        raise ValueError("window values outside the int8 range")
    x = x.astype(np.int64)
    s = x.sum(axis=1)
    ss = (x * x).sum(axis=1)
    avg = s / float(WINDOW_TIMESTEPS)
    var = ss / float(WINDOW_TIMESTEPS) - avg * avg
    energy = ss.astype(np.float64)
    mx = x.max(axis=1).astype(np.float64)
    mn = x.min(axis=1).astype(np.float64)
    p2p = mx - mn
    zc = (x[:, :-1, :] * x[:, 1:, :] < 0).sum(axis=1).astype(np.float64)
    stacked = np.stack([avg, var, energy, mx, mn, p2p, zc], axis=2)
    return stacked.reshape(x.shape[0], N_FEATURES)


# --- quantization -------------------------------------------------------------


def _round_half_away(q: Fraction) -> int:
    return math.floor(q + Fraction(1, 2)) if q >= 0 else math.ceil(
        q - Fraction(1, 2)
    )


def quantize_value(value: float, scale: float, zero: float) -> int:
    """round((v - zero) / scale) half away from zero, clamped to int8.

    The quotient is formed in exact rational arithmetic so the rounding
    decision is the true one for the given float inputs.
    """
    q = _round_half_away(
        (Fraction(float(value)) - Fraction(zero)) / Fraction(scale)
    )
    return min(max(q, I8_MIN), I8_MAX)


def quantize_features_batch(
    features: np.ndarray, scale, zero
) -> np.ndarray:
    out = np.empty(features.shape, dtype=np.int64)
    for j in range(features.shape[1]):
        s, z = scale[j], zero[j]
        out[:, j] = [
            quantize_value(v, s, z) for v in features[:, j].tolist()
        ]
    return out


def calibrate_quantizer(
    train_features: np.ndarray,
) -> tuple[list[float], list[float]]:
    """Per-feature affine quantizer spanning the training range.

    ``zero`` is the range midpoint and ``scale`` maps the range onto
    [-127, 127]; a constant feature gets scale 1.  Both are rounded to
    float32, the precision the deployment format stores.
    """
    mn = train_features.min(axis=0)
    mx = train_features.max(axis=0)
    zero = ((mn + mx) / 2.0).astype(np.float32)
    scale = ((mx - mn) / 254.0).astype(np.float32)
    scale = np.where(scale > 0, scale, np.float32(1.0))
    return [float(s) for s in scale], [float(z) for z in zero]


def quantize_distribution(counts) -> tuple[int, ...]:
    """Scale nonnegative class counts to unsigned bytes summing to 255.

    Largest-remainder rounding keeps the sum exact; remainder ties break
    toward the lower class index.
    """
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0 or (counts < 0).any():
        raise ExportError(f"leaf class counts {counts.tolist()} unusable")
    raw = counts * (LEAF_SUM / total)
    base = np.floor(raw).astype(np.int64)
    short = LEAF_SUM - int(base.sum())
    order = sorted(
        range(len(counts)), key=lambda i: (-(raw[i] - base[i]), i)
    )
    for i in order[:short]:
        base[i] += 1
    return tuple(int(v) for v in base)


# --- flattening ---------------------------------------------------------------


def flatten_tree(
    tree, transform, payload, nodes: list, leaves: list
) -> int:
    """Append one sklearn tree in implicit-left-child order; return its root.

    ``transform(feature_index, threshold)`` maps a float cut point to the
    stored threshold; ``payload(node_id)`` maps a sklearn leaf to its leaf
    table entry.  Internal nodes store (feature, threshold, right-child
    index); leaves store (-1, 0, leaf-table index).
    """
    left, right = tree.children_left, tree.children_right
    feature, threshold = tree.feature, tree.threshold

    def emit(nid: int) -> int:
        idx = len(nodes)
        if left[nid] < 0:
            leaves.append(payload(nid))
            nodes.append((-1, 0, len(leaves) - 1))
            return idx
        nodes.append(None)  # left child fills idx + 1 implicitly
        emit(int(left[nid]))
        right_idx = emit(int(right[nid]))
        nodes[idx] = (
            int(feature[nid]),
            transform(int(feature[nid]), float(threshold[nid])),
            right_idx,
        )
        return idx

    return emit(0)


def descend_flat(nodes, leaves, root: int, qfeatures):
    """Walk one flattened tree; returns the leaf payload.

    feature <= threshold goes to the next slot, otherwise to the stored
    right child.  A step counter bounded by the node count guards against
    cyclic or truncated layouts.
    """
    idx = root
    for _ in range(len(nodes) + 1):
        feat, threshold, right = nodes[idx]
        if feat < 0:
            return leaves[right]
        idx = idx + 1 if qfeatures[feat] <= threshold else right
    raise ExportError("flattened tree descent exceeded the node count")


# --- training and export -------------------------------------------------------


@dataclass
class RfResult:
    """A fitted float forest plus the data and features it came from."""

    classifier: RandomForestClassifier
    config: object
    dataset: object
    features_train: np.ndarray
    features_val: np.ndarray
    float_train_accuracy: float
    float_val_accuracy: float


def train_rf(config) -> RfResult:
    """Fit a float random forest on the config's synthetic dataset."""
    if (config.timesteps, config.channels) != (
        WINDOW_TIMESTEPS, WINDOW_AXES
    ):
        raise ConfigError(
            f"feature extraction is defined on "
            f"({WINDOW_TIMESTEPS}, {WINDOW_AXES}) windows, config has "
            f"({config.timesteps}, {config.channels})"
        )
    dataset = make_dataset(config)
    features_train = extract_features_batch(dataset.x_train)
    features_val = extract_features_batch(dataset.x_val)
    classifier = RandomForestClassifier(
        n_estimators=config.n_trees,
        max_depth=config.rf_max_depth,
        random_state=config.seed,
    )
    classifier.fit(features_train, dataset.y_train)
    if list(classifier.classes_) != list(range(config.n_classes)):
        raise ExportError(
            f"training split covers classes {list(classifier.classes_)}, "
            f"expected 0..{config.n_classes - 1}"
        )
    return RfResult(
        classifier, config, dataset, features_train, features_val,
        float(classifier.score(features_train, dataset.y_train)),
        float(classifier.score(features_val, dataset.y_val)),
    )


def forest_document(result: RfResult) -> dict:
    """Quantize and flatten a fitted forest into interchange JSON."""
    scale, zero = calibrate_quantizer(result.features_train)
    nodes: list = []
    leaves: list = []
    roots: list[int] = []
    for estimator in result.classifier.estimators_:
        tree = estimator.tree_
        roots.append(flatten_tree(
            tree,
            transform=lambda f, th: quantize_value(th, scale[f], zero[f]),
            payload=lambda nid: quantize_distribution(tree.value[nid][0]),
            nodes=nodes,
            leaves=leaves,
        ))
    for what, count in (
        ("nodes", len(nodes)), ("leaves", len(leaves)), ("roots", len(roots))
    ):
        if count > MAX_U16:
            raise ExportError(
                f"forest has {count} {what}; the 16-bit index space allows "
                f"{MAX_U16}"
            )
    return {
        "kind": "forest",
        "version": INTERCHANGE_VERSION,
        "n_classes": int(result.config.n_classes),
        "n_features": N_FEATURES,
        "roots": roots,
        "nodes": [list(n) for n in nodes],
        "leaves": [list(vec) for vec in leaves],
        "quantizer": {"scale": list(scale), "zero": list(zero)},
    }


def predict_forest_quantized(doc: dict, windows: np.ndarray) -> list[int]:
    """Evaluate forest interchange JSON on raw windows, integers only.

    Feature extraction, quantization, and descent all read the document,
    so the predictions certify it; argmax ties break to the lower class.
    """
    features = extract_features_batch(windows)
    qf = quantize_features_batch(
        features, doc["quantizer"]["scale"], doc["quantizer"]["zero"]
    )
    nodes = [tuple(n) for n in doc["nodes"]]
    leaves = [np.asarray(vec, dtype=np.int64) for vec in doc["leaves"]]
    predictions = []
    for row in qf:
        totals = np.zeros(doc["n_classes"], dtype=np.int64)
        for root in doc["roots"]:
            totals += descend_flat(nodes, leaves, root, row)
        predictions.append(int(np.argmax(totals)))
    return predictions


def export_rf(result: RfResult) -> ExportBundle:
    """Export a fitted forest: document, parity manifest, run report."""
    doc = forest_document(result)
    windows = result.dataset.x_manifest
    manifest = build_manifest(
        "forest",
        {
            "timesteps": WINDOW_TIMESTEPS,
            "channels": WINDOW_AXES,
            "domain": "int8",
        },
        windows,
        predict_forest_quantized(doc, windows),
    )
    val_predictions = np.asarray(
        predict_forest_quantized(doc, result.dataset.x_val)
    )
    report = {
        "float_train_accuracy": result.float_train_accuracy,
        "float_val_accuracy": result.float_val_accuracy,
        "quantized_val_accuracy": float(
            (val_predictions == result.dataset.y_val).mean()
        ),
        "n_nodes": len(doc["nodes"]),
        "n_leaves": len(doc["leaves"]),
    }
    return ExportBundle(doc, manifest, report)

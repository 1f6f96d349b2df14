"""Flattened-array Random Forest inference with 8-bit quantized parameters.

A forest lives in three flat arrays: FOREST holds fixed-width node records
whose left child is implicitly the next array element (only the right child
index is stored), LEAVES holds one unsigned 8-bit probability vector per
leaf, and ROOTS holds the node index of each tree's root. Descent compares
a quantized feature against the node threshold (feature <= threshold goes
left); leaf vectors accumulate into 32-bit sums and the lowest-index argmax
wins. The 7-feature extraction for 32-sample tri-axial windows and the
feature quantizer live here too.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import (
    BadMagicError,
    InterchangeError,
    MalformedForestError,
    TruncatedError,
    ValidationError,
    VersionError,
)

MAGIC = b"URF1"
FORMAT_VERSION = 1

WINDOW_TIMESTEPS = 32
WINDOW_AXES = 3
FEATURES_PER_AXIS = 7
N_FEATURES = WINDOW_AXES * FEATURES_PER_AXIS

I8_MIN, I8_MAX = -128, 127


@dataclass(frozen=True)
class RfNode:
    """One FOREST record: 5 packed bytes in the serialized form.

    feature_index -1 marks a leaf, whose right_child indexes LEAVES;
    internal nodes descend to index + 1 (left) or right_child (right).
    """

    feature_index: int
    threshold: int
    right_child: int

    def __post_init__(self):
        if not -1 <= self.feature_index <= 0x7FFF:
            raise ValueError(
                f"feature_index {self.feature_index} outside [-1, 32767]"
            )
        if not I8_MIN <= self.threshold <= I8_MAX:
            raise ValueError(f"threshold {self.threshold} outside int8")
        if not 0 <= self.right_child <= 0xFFFF:
            raise ValueError(f"right_child {self.right_child} outside uint16")

    @property
    def is_leaf(self) -> bool:
        return self.feature_index < 0


@dataclass(frozen=True)
class Forest:
    """FOREST/LEAVES/ROOTS arrays plus class and feature counts.

    Construction checks field ranges only; run validate_forest for the
    structural invariants (loaders always do).
    """

    nodes: tuple[RfNode, ...]
    leaves: tuple[tuple[int, ...], ...]
    roots: tuple[int, ...]
    n_classes: int
    n_features: int

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(
            self, "leaves", tuple(tuple(v) for v in self.leaves)
        )
        object.__setattr__(self, "roots", tuple(self.roots))
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        for li, vec in enumerate(self.leaves):
            if len(vec) != self.n_classes:
                raise ValueError(
                    f"leaf {li} holds {len(vec)} entries for "
                    f"{self.n_classes} classes"
                )
            for v in vec:
                if not 0 <= v <= 255:
                    raise ValueError(f"leaf {li} value {v} outside uint8")
        for root in self.roots:
            if not 0 <= root <= 0xFFFF:
                raise ValueError(f"root index {root} outside uint16")


def validate_forest(forest: Forest) -> None:
    """Check the structural invariants every loaded forest must satisfy.

    Forward-only right children plus implicit next-index left children make
    every descent strictly increase the node index, which bounds traversal
    by the array length and rules out cycles.
    """
    n_nodes = len(forest.nodes)
    n_leaves = len(forest.leaves)
    if not forest.roots:
        raise ValidationError("forest has no roots")
    if n_nodes == 0:
        raise ValidationError("forest has no nodes")
    for ri, root in enumerate(forest.roots):
        if root >= n_nodes:
            raise ValidationError(
                f"root {ri} points at node {root} of {n_nodes}"
            )
    for i, node in enumerate(forest.nodes):
        if node.is_leaf:
            if node.feature_index != -1:
                raise ValidationError(
                    f"node {i}: leaf marker must be -1, got {node.feature_index}"
                )
            if node.right_child >= n_leaves:
                raise ValidationError(
                    f"node {i}: leaf vector {node.right_child} of {n_leaves}"
                )
        else:
            if node.feature_index >= forest.n_features:
                raise ValidationError(
                    f"node {i}: feature {node.feature_index} of "
                    f"{forest.n_features}"
                )
            if i + 1 >= n_nodes:
                raise ValidationError(
                    f"node {i}: internal node at the end of the array has "
                    f"no left child"
                )
            if node.right_child <= i:
                raise ValidationError(
                    f"node {i}: right child {node.right_child} is not "
                    f"forward-only"
                )
            if node.right_child >= n_nodes:
                raise ValidationError(
                    f"node {i}: right child {node.right_child} of {n_nodes}"
                )
    slack = forest.n_classes
    for li, vec in enumerate(forest.leaves):
        total = sum(vec)
        if not 255 - slack <= total <= 255 + slack:
            raise ValidationError(
                f"leaf {li} distribution sums to {total}, "
                f"expected 255 +- {slack}"
            )


@dataclass(frozen=True)
class FeatureQuantizer:
    """Per-feature affine map from real feature values to signed 8-bit."""

    scale: tuple[float, ...]
    zero: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "scale", tuple(float(s) for s in self.scale))
        object.__setattr__(self, "zero", tuple(float(z) for z in self.zero))
        if len(self.scale) != len(self.zero):
            raise ValueError(
                f"{len(self.scale)} scales for {len(self.zero)} zero points"
            )
        for i, s in enumerate(self.scale):
            if not (math.isfinite(s) and s > 0):
                raise ValueError(f"scale[{i}] must be finite and positive, got {s}")
        for i, z in enumerate(self.zero):
            if not math.isfinite(z):
                raise ValueError(f"zero[{i}] must be finite, got {z}")

    @property
    def n_features(self) -> int:
        return len(self.scale)


_HALF = Fraction(1, 2)


def _round_half_away(x: Fraction) -> int:
    return math.floor(x + _HALF) if x >= 0 else math.ceil(x - _HALF)


def quantize_features(
    features: Sequence[float], quantizer: FeatureQuantizer
) -> list[int]:
    """round((f - zero) / scale), half away from zero, clamped to [-128, 127].

    The quotient is formed in exact rational arithmetic, so the rounding
    decision is the true mathematical one for the given float inputs rather
    than whatever a double-precision division happens to land on.
    """
    if len(features) != quantizer.n_features:
        raise ValueError(
            f"{len(features)} features for a {quantizer.n_features}-feature "
            f"quantizer"
        )
    out = []
    for f, s, z in zip(features, quantizer.scale, quantizer.zero):
        q = _round_half_away((Fraction(float(f)) - Fraction(z)) / Fraction(s))
        out.append(min(max(q, I8_MIN), I8_MAX))
    return out


def extract_features(window) -> list[float]:
    """Seven features per axis from a 32x3 integer window, axis-major.

    Per axis, in order: average, population variance, energy (sum of
    squares), max, min, peak-to-peak, and zero crossings (consecutive
    samples with product < 0; zeros do not toggle). Feature j of axis a
    lands at index a * 7 + j. Sums over 32 int8 samples keep every division
    here a power of two over a small integer, so all values are exact in
    double precision.
    """
    arr = np.asarray(window)
    if arr.shape != (WINDOW_TIMESTEPS, WINDOW_AXES):
        raise ValueError(
            f"window shape {arr.shape}, expected "
            f"({WINDOW_TIMESTEPS}, {WINDOW_AXES})"
        )
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError("window must hold integer samples")
    if arr.min() < I8_MIN or arr.max() > I8_MAX:
        raise ValueError("window values outside the int8 range")
    out: list[float] = []
    for a in range(WINDOW_AXES):
        x = [int(v) for v in arr[:, a]]
        n = len(x)
        s = sum(x)
        ss = sum(v * v for v in x)
        avg = s / n
        var = ss / n - avg * avg
        energy = float(ss)
        mx = float(max(x))
        mn = float(min(x))
        p2p = mx - mn
        zc = sum(1 for i in range(n - 1) if x[i] * x[i + 1] < 0)
        out.extend([avg, var, energy, mx, mn, p2p, float(zc)])
    return out


def rf_predict(features: Sequence[int], forest: Forest) -> int:
    """Accumulate every tree's leaf distribution and take the argmax.

    Descent: feature <= threshold goes to the next node, otherwise to
    right_child. A step counter bounded by the node count guards against
    malformed forests that validate_forest never saw.
    """
    if len(features) != forest.n_features:
        raise ValueError(
            f"{len(features)} features for a {forest.n_features}-feature forest"
        )
    for i, f in enumerate(features):
        if not I8_MIN <= f <= I8_MAX:
            raise ValueError(f"feature {i} value {f} outside int8")
    n_nodes = len(forest.nodes)
    totals = [0] * forest.n_classes
    for root in forest.roots:
        if root >= n_nodes:
            raise MalformedForestError(f"root {root} outside the node array")
        i = root
        steps = 0
        while not forest.nodes[i].is_leaf:
            steps += 1
            if steps > n_nodes:
                raise MalformedForestError(
                    f"traversal from root {root} exceeded {n_nodes} steps"
                )
            node = forest.nodes[i]
            i = i + 1 if features[node.feature_index] <= node.threshold else node.right_child
            if i >= n_nodes:
                raise MalformedForestError(
                    f"traversal from root {root} left the node array at {i}"
                )
        leaf = forest.nodes[i].right_child
        if leaf >= len(forest.leaves):
            raise MalformedForestError(
                f"leaf vector {leaf} outside the leaf array"
            )
        vec = forest.leaves[leaf]
        for c in range(forest.n_classes):
            totals[c] += vec[c]
    best = 0
    for c in range(1, forest.n_classes):
        if totals[c] > totals[best]:
            best = c
    return best


# --- binary format ---------------------------------------------------------


def _f32(x: float) -> float:
    """Round to the nearest float32 value (interchange precision)."""
    return struct.unpack("<f", struct.pack("<f", x))[0]


def save_forest_bytes(forest: Forest, quantizer: FeatureQuantizer) -> bytes:
    """Serialize a validated forest plus its quantizer to URF1 bytes."""
    validate_forest(forest)
    if quantizer.n_features != forest.n_features:
        raise ValidationError(
            f"quantizer covers {quantizer.n_features} features, forest "
            f"expects {forest.n_features}"
        )
    for what, v in (
        ("class count", forest.n_classes),
        ("feature count", forest.n_features),
        ("root count", len(forest.roots)),
    ):
        if v > 0xFFFF:
            raise ValidationError(f"{what} {v} exceeds the u16 format limit")
    out = bytearray()
    out += MAGIC
    out += struct.pack(
        "<HHHHII",
        FORMAT_VERSION,
        forest.n_classes,
        forest.n_features,
        len(forest.roots),
        len(forest.nodes),
        len(forest.leaves),
    )
    for root in forest.roots:
        out += struct.pack("<H", root)
    for node in forest.nodes:
        out += struct.pack(
            "<hbH", node.feature_index, node.threshold, node.right_child
        )
    for vec in forest.leaves:
        out += bytes(vec)
    for s, z in zip(quantizer.scale, quantizer.zero):
        out += struct.pack("<ff", s, z)
    return bytes(out)


def save_forest(forest: Forest, quantizer: FeatureQuantizer, path) -> None:
    data = save_forest_bytes(forest, quantizer)
    with open(path, "wb") as f:
        f.write(data)


def load_forest_bytes(data: bytes) -> tuple[Forest, FeatureQuantizer]:
    """Parse URF1 bytes into a validated (Forest, FeatureQuantizer) pair."""
    if len(data) < len(MAGIC):
        raise TruncatedError(f"file of {len(data)} bytes is shorter than the magic")
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedError(
                f"file ends at byte {len(data)}, needed {pos + n}"
            )
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    version, n_classes, n_features, n_roots, n_nodes, n_leaves = struct.unpack(
        "<HHHHII", take(16)
    )
    if version != FORMAT_VERSION:
        raise VersionError(f"format version {version}, reader speaks {FORMAT_VERSION}")
    roots = struct.unpack(f"<{n_roots}H", take(2 * n_roots)) if n_roots else ()
    nodes = tuple(
        RfNode(*struct.unpack("<hbH", take(5))) for _ in range(n_nodes)
    )
    leaves = tuple(tuple(take(n_classes)) for _ in range(n_leaves))
    scale, zero = [], []
    for _ in range(n_features):
        s, z = struct.unpack("<ff", take(8))
        scale.append(s)
        zero.append(z)
    if pos != len(data):
        raise ValidationError(f"{len(data) - pos} trailing bytes after the quantizer")
    try:
        forest = Forest(
            nodes=nodes,
            leaves=leaves,
            roots=roots,
            n_classes=n_classes,
            n_features=n_features,
        )
        quantizer = FeatureQuantizer(scale=tuple(scale), zero=tuple(zero))
    except ValueError as e:
        raise ValidationError(str(e)) from e
    validate_forest(forest)
    return forest, quantizer


def load_forest(path) -> tuple[Forest, FeatureQuantizer]:
    with open(path, "rb") as f:
        data = f.read()
    return load_forest_bytes(data)


# --- JSON interchange ------------------------------------------------------


def forest_to_json(forest: Forest, quantizer: FeatureQuantizer) -> dict:
    """Mirror the binary format as a JSON-serializable dict."""
    validate_forest(forest)
    return {
        "kind": "forest",
        "version": FORMAT_VERSION,
        "n_classes": forest.n_classes,
        "n_features": forest.n_features,
        "roots": list(forest.roots),
        "nodes": [
            [n.feature_index, n.threshold, n.right_child] for n in forest.nodes
        ],
        "leaves": [list(vec) for vec in forest.leaves],
        "quantizer": {
            "scale": [_f32(s) for s in quantizer.scale],
            "zero": [_f32(z) for z in quantizer.zero],
        },
    }


def _ints_at(obj, key, path):
    if key not in obj:
        raise InterchangeError("missing array", f"{path}.{key}" if path else key)
    vals = obj[key]
    p = f"{path}.{key}" if path else key
    if not isinstance(vals, list):
        raise InterchangeError(
            f"expected an array, got {type(vals).__name__}", p
        )
    return vals, p


def forest_from_json(obj) -> tuple[Forest, FeatureQuantizer]:
    """Build and validate a forest directly from interchange JSON.

    Quantizer reals are rounded to float32 on the way in, so interpreting
    the JSON directly and loading a converted binary file see identical
    parameters.
    """
    if not isinstance(obj, dict):
        raise InterchangeError(f"expected an object, got {type(obj).__name__}")
    if obj.get("kind") != "forest":
        raise InterchangeError(
            f"expected kind 'forest', got {obj.get('kind')!r}", "kind"
        )
    if obj.get("version") != FORMAT_VERSION:
        raise InterchangeError(
            f"version {obj.get('version')!r}, reader speaks {FORMAT_VERSION}",
            "version",
        )

    def scalar(key):
        v = obj.get(key)
        if not isinstance(v, int) or isinstance(v, bool):
            raise InterchangeError("expected an integer", key)
        return v

    n_classes = scalar("n_classes")
    n_features = scalar("n_features")

    roots, rpath = _ints_at(obj, "roots", "")
    for i, v in enumerate(roots):
        if not isinstance(v, int) or isinstance(v, bool):
            raise InterchangeError("expected an integer", f"{rpath}[{i}]")

    raw_nodes, npath = _ints_at(obj, "nodes", "")
    nodes = []
    for i, rec in enumerate(raw_nodes):
        if not (isinstance(rec, list) and len(rec) == 3):
            raise InterchangeError(
                "expected [feature_index, threshold, right_child]",
                f"{npath}[{i}]",
            )
        for v in rec:
            if not isinstance(v, int) or isinstance(v, bool):
                raise InterchangeError("expected an integer", f"{npath}[{i}]")
        try:
            nodes.append(RfNode(*rec))
        except ValueError as e:
            raise InterchangeError(str(e), f"{npath}[{i}]") from None

    raw_leaves, lpath = _ints_at(obj, "leaves", "")
    leaves = []
    for i, vec in enumerate(raw_leaves):
        if not isinstance(vec, list):
            raise InterchangeError("expected an array", f"{lpath}[{i}]")
        for v in vec:
            if not isinstance(v, int) or isinstance(v, bool):
                raise InterchangeError("expected an integer", f"{lpath}[{i}]")
        leaves.append(tuple(vec))

    q = obj.get("quantizer")
    if not isinstance(q, dict):
        raise InterchangeError("expected an object", "quantizer")
    reals = {}
    for key in ("scale", "zero"):
        vals, p = _ints_at(q, key, "quantizer")
        for i, v in enumerate(vals):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise InterchangeError("expected a number", f"{p}[{i}]")
        reals[key] = [_f32(float(v)) for v in vals]
    if len(reals["scale"]) != n_features or len(reals["zero"]) != n_features:
        raise InterchangeError(
            f"quantizer must cover {n_features} features", "quantizer"
        )

    try:
        forest = Forest(
            nodes=tuple(nodes),
            leaves=tuple(leaves),
            roots=tuple(roots),
            n_classes=n_classes,
            n_features=n_features,
        )
        quantizer = FeatureQuantizer(
            scale=tuple(reals["scale"]), zero=tuple(reals["zero"])
        )
    except ValueError as e:
        raise InterchangeError(str(e)) from None
    try:
        validate_forest(forest)
    except ValidationError as e:
        raise InterchangeError(str(e), "nodes") from None
    return forest, quantizer

"""Layer kernels over packed streams.

Binarized 1D convolution as XNOR + popcount + integer threshold, the mixed
int8/binary first convolution, max pooling as bitwise OR (optionally fused
into the producing convolution), and the non-binarized fully-connected
scoring head. All convolutions are stride 1 with valid padding
(T_out = T - K + 1); zero padding in time is never applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np

from .bitpack import (
    WORD_BITS,
    BitStream,
    PackedBitTensor,
    words_for_bits,
)

I32_MIN = -(2**31)
I32_MAX = 2**31 - 1

# One unit in Q16.16 fixed point.
Q16_ONE = 1 << 16

# Largest K * C_in for which an int8 accumulator provably fits in 32 bits.
MAX_INT8_DOT_LEN = 2**24

# Default blocking of the inner conv loops: (timesteps, output channels)
# processed per iteration. Purely a schedule; output bits never depend on it.
DEFAULT_BLOCK = (2, 2)


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


class Direction(IntEnum):
    """Comparison direction of a folded batchnorm threshold."""

    GEQ = 0
    LEQ = 1


@dataclass(frozen=True)
class ThresholdSpec:
    """Per-channel integer threshold replacing batchnorm + sign.

    A GEQ spec stores the ceiling of the real threshold and passes counts
    >= it; a LEQ spec (negative batchnorm gain) stores the floor and passes
    counts <= it.
    """

    threshold: int
    direction: Direction

    def __post_init__(self):
        if not I32_MIN <= self.threshold <= I32_MAX:
            raise ValueError(f"threshold {self.threshold} outside int32")
        if not isinstance(self.direction, Direction):
            object.__setattr__(self, "direction", Direction(self.direction))

    def passes(self, accumulator: int) -> bool:
        if self.direction is Direction.GEQ:
            return accumulator >= self.threshold
        return accumulator <= self.threshold


@dataclass(frozen=True)
class PoolSpec:
    """Non-overlapping max pool: kernel and stride must match."""

    pool_k: int
    pool_s: int

    def __post_init__(self):
        if self.pool_k < 1:
            raise ValueError("pool_k must be >= 1")
        if self.pool_k != self.pool_s:
            raise ValueError(
                f"only pool_k == pool_s is supported, got "
                f"({self.pool_k}, {self.pool_s})"
            )


@dataclass(frozen=True)
class BinaryConvLayer:
    """Binarized 1D convolution with folded batchnorm thresholds.

    Weight bit (k, c) of filter m sits at logical index k * c_in + c,
    mirroring the time-major activation layout, so an extracted input
    window and a filter stream align word for word. Each filter stream is
    padded to a word boundary (whole-word loads).
    """

    c_in: int
    c_out: int
    k: int
    weights: tuple[BitStream, ...]
    thresholds: tuple[ThresholdSpec, ...]
    fused_pool: Optional[PoolSpec] = None

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "thresholds", tuple(self.thresholds))
        if not _is_pow2(self.c_in):
            raise ValueError(f"c_in {self.c_in} is not a power of two")
        self._check_common()

    def _check_common(self):
        if not _is_pow2(self.c_out):
            raise ValueError(f"c_out {self.c_out} is not a power of two")
        if self.k < 1:
            raise ValueError("kernel size must be >= 1")
        if len(self.weights) != self.c_out:
            raise ValueError(
                f"{len(self.weights)} filters for {self.c_out} output channels"
            )
        want = self.k * self.c_in
        for m, w in enumerate(self.weights):
            if w.bit_len != want:
                raise ValueError(
                    f"filter {m} holds {w.bit_len} bits, expected {want}"
                )
        if len(self.thresholds) != self.c_out:
            raise ValueError(
                f"{len(self.thresholds)} thresholds for {self.c_out} channels"
            )

    @property
    def window_bits(self) -> int:
        return self.k * self.c_in

    @property
    def window_words(self) -> int:
        return words_for_bits(self.window_bits)


@dataclass(frozen=True)
class Int8ConvLayer(BinaryConvLayer):
    """First-layer convolution: int8 inputs against +-1 packed weights.

    Thresholds compare the raw integer accumulator (no popcount mapping).
    c_in is the raw sensor channel count and need not be a power of two;
    only the binarized output side is power-of-two constrained.
    """

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "thresholds", tuple(self.thresholds))
        if self.c_in < 1:
            raise ValueError("c_in must be >= 1")
        if self.k * self.c_in > MAX_INT8_DOT_LEN:
            raise ValueError(
                f"K * C_in = {self.k * self.c_in} exceeds the 32-bit "
                f"accumulator bound {MAX_INT8_DOT_LEN}"
            )
        self._check_common()


@dataclass(frozen=True)
class BinaryFcLayer:
    """Output head: affine scores of the binary dot product, no re-binarization.

    score_scale / score_bias are Q16.16 fixed point, one pair per class.
    """

    in_bits: int
    n_classes: int
    weights: tuple[BitStream, ...]
    score_scale: tuple[int, ...]
    score_bias: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "score_scale", tuple(self.score_scale))
        object.__setattr__(self, "score_bias", tuple(self.score_bias))
        if self.in_bits < 1:
            raise ValueError("in_bits must be >= 1")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if len(self.weights) != self.n_classes:
            raise ValueError(
                f"{len(self.weights)} weight rows for {self.n_classes} classes"
            )
        for m, w in enumerate(self.weights):
            if w.bit_len != self.in_bits:
                raise ValueError(
                    f"class {m} weights hold {w.bit_len} bits, "
                    f"expected {self.in_bits}"
                )
        for name, vals in (("score_scale", self.score_scale),
                           ("score_bias", self.score_bias)):
            if len(vals) != self.n_classes:
                raise ValueError(f"{name} needs {self.n_classes} entries")
            for v in vals:
                if not I32_MIN <= v <= I32_MAX:
                    raise ValueError(f"{name} value {v} outside int32 Q16.16")


@dataclass
class OpCounter:
    """Debug counters for executed word-level operations.

    Counts model 32-bit-word execution: one XNOR and one popcount per window
    word per (timestep, channel), one compare per output element, one OR per
    word of each row folded into a pooled destination, and one MAC per
    weight element of the int8 first layer.
    """

    xnor_word_ops: int = 0
    popcount_ops: int = 0
    threshold_compares: int = 0
    or_ops: int = 0
    int8_mac_equivalents: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "xnor_word_ops": self.xnor_word_ops,
            "popcount_ops": self.popcount_ops,
            "threshold_compares": self.threshold_compares,
            "or_ops": self.or_ops,
            "int8_mac_equivalents": self.int8_mac_equivalents,
        }


def fold_batchnorm_binary(
    mu: float,
    sigma: float,
    gamma: float,
    beta: float,
    k: int,
    c_in: int,
) -> ThresholdSpec:
    """Fold batchnorm + sign over a +-1 accumulator into one integer compare.

    For a window of N = k * c_in bits with agreement count P, the layer
    output is sign(gamma * ((2P - N) - mu) / sigma + beta) with sign(0) = +1.
    The real threshold is ((mu - beta * sigma / gamma) + N) / 2; a positive
    gamma keeps the comparison direction (P >= ceil), a negative gamma flips
    it (P <= floor). The rounded candidate is then nudged so the integer
    comparison agrees with the float expression at every P in [0, N],
    including exact ties.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if gamma == 0:
        raise ValueError("gamma must be nonzero")
    n = k * c_in

    def passes(p: int) -> bool:
        return gamma * ((2 * p - n) - mu) / sigma + beta >= 0.0

    th = ((mu - beta * sigma / gamma) + n) / 2.0
    if gamma > 0:
        t = min(max(math.ceil(th), -1), n + 1)
        while t <= n and not passes(t):
            t += 1
        while t - 1 >= 0 and passes(t - 1):
            t -= 1
        return ThresholdSpec(t, Direction.GEQ)
    t = min(max(math.floor(th), -1), n + 1)
    while t >= 0 and not passes(t):
        t -= 1
    while t + 1 <= n and passes(t + 1):
        t += 1
    return ThresholdSpec(t, Direction.LEQ)


def _rows_to_tensor(rows: Sequence[int], channels: int) -> PackedBitTensor:
    """Assemble per-timestep channel bitmasks into a packed tensor."""
    value = 0
    for row in rows:
        value = (value << channels) | row
    bit_len = len(rows) * channels
    pad = words_for_bits(bit_len) * WORD_BITS
    return PackedBitTensor(
        BitStream(bit_len, value << (pad - bit_len)), len(rows), channels
    )


def _pool_rows(
    rows: Sequence[int],
    pool: PoolSpec,
    channels: int,
    counter: Optional[OpCounter],
) -> list[int]:
    """OR-fold rows into non-overlapping groups; a trailing partial group is dropped."""
    t_out = len(rows) // pool.pool_k
    row_words = words_for_bits(channels)
    pooled = []
    for tp in range(t_out):
        acc = 0
        for row in rows[tp * pool.pool_k : (tp + 1) * pool.pool_k]:
            acc |= row
            if counter is not None:
                counter.or_ops += row_words
        pooled.append(acc)
    return pooled


def conv1d_binary(
    x: PackedBitTensor,
    layer: BinaryConvLayer,
    counter: Optional[OpCounter] = None,
    block: tuple[int, int] = DEFAULT_BLOCK,
) -> PackedBitTensor:
    """Binarized convolution: XNOR + popcount + threshold per (t, m).

    Output bit (t, m) is the threshold comparison of the agreement count
    between the K * C_in window starting at bit t * C_in and filter m.
    Timesteps drive the outer loop and output channels the inner one; the
    ``block`` tunable processes block[0] timesteps x block[1] channels per
    iteration (extracted windows are reused across the channel group) and is
    a pure schedule choice. With ``fused_pool`` set, rows are OR-folded into
    the pooled destination as they are produced instead of materializing the
    un-pooled tensor.
    """
    if x.channels != layer.c_in:
        raise ValueError(
            f"input has {x.channels} channels, layer expects {layer.c_in}"
        )
    if x.timesteps < layer.k:
        raise ValueError(
            f"input of {x.timesteps} timesteps shorter than kernel {layer.k}"
        )
    t_out = x.timesteps - layer.k + 1
    win_bits = layer.window_bits
    win_words = layer.window_words
    full = (1 << win_bits) - 1
    wvals = [w.window_value(0, win_bits) for w in layer.weights]
    src = x.stream

    block_t = max(1, block[0])
    block_m = max(1, block[1])
    rows = [0] * t_out
    for t0 in range(0, t_out, block_t):
        t_hi = min(t0 + block_t, t_out)
        wins = [
            src.window_value(t * layer.c_in, win_bits) for t in range(t0, t_hi)
        ]
        for m0 in range(0, layer.c_out, block_m):
            m_hi = min(m0 + block_m, layer.c_out)
            for m in range(m0, m_hi):
                w = wvals[m]
                spec = layer.thresholds[m]
                shift = layer.c_out - 1 - m
                for i, win in enumerate(wins):
                    p = ((win ^ w) ^ full).bit_count()
                    if counter is not None:
                        counter.xnor_word_ops += win_words
                        counter.popcount_ops += win_words
                        counter.threshold_compares += 1
                    if spec.passes(p):
                        rows[t0 + i] |= 1 << shift

    if layer.fused_pool is not None:
        if layer.fused_pool.pool_k > t_out:
            raise ValueError(
                f"pool_k {layer.fused_pool.pool_k} exceeds the "
                f"{t_out} convolution timesteps"
            )
        rows = _pool_rows(rows, layer.fused_pool, layer.c_out, counter)
    return _rows_to_tensor(rows, layer.c_out)


def conv1d_int8(
    x: np.ndarray,
    layer: Int8ConvLayer,
    counter: Optional[OpCounter] = None,
) -> PackedBitTensor:
    """Mixed convolution: int8 inputs, +-1 weights, threshold on the raw sum."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != layer.c_in:
        raise ValueError(
            f"input shape {x.shape} incompatible with layer c_in {layer.c_in}"
        )
    if not np.issubdtype(x.dtype, np.integer):
        raise ValueError("int8 convolution needs an integer input tensor")
    if x.size and (x.min() < -128 or x.max() > 127):
        raise ValueError("input values outside the int8 range")
    timesteps = x.shape[0]
    if timesteps < layer.k:
        raise ValueError(
            f"input of {timesteps} timesteps shorter than kernel {layer.k}"
        )
    t_out = timesteps - layer.k + 1

    # (c_out, k * c_in) matrix of +-1 weights, row m in window bit order.
    wmat = np.stack(
        [2 * w.bits().astype(np.int64) - 1 for w in layer.weights]
    )
    xi = x.astype(np.int64)
    macs_per_step = layer.c_out * layer.k * layer.c_in
    rows = [0] * t_out
    for t in range(t_out):
        window = xi[t : t + layer.k].reshape(-1)
        acc = wmat @ window
        if counter is not None:
            counter.int8_mac_equivalents += macs_per_step
            counter.threshold_compares += layer.c_out
        row = 0
        for m in range(layer.c_out):
            row = (row << 1) | (1 if layer.thresholds[m].passes(int(acc[m])) else 0)
        rows[t] = row

    if layer.fused_pool is not None:
        if layer.fused_pool.pool_k > t_out:
            raise ValueError(
                f"pool_k {layer.fused_pool.pool_k} exceeds the "
                f"{t_out} convolution timesteps"
            )
        rows = _pool_rows(rows, layer.fused_pool, layer.c_out, counter)
    return _rows_to_tensor(rows, layer.c_out)


def maxpool_binary(
    x: PackedBitTensor,
    pool_k: int,
    pool_s: int,
    counter: Optional[OpCounter] = None,
) -> PackedBitTensor:
    """Max pool over +-1 values, realized as bitwise OR of the encodings."""
    pool = PoolSpec(pool_k, pool_s)  # rejects pool_k != pool_s
    if pool_k > x.timesteps:
        raise ValueError(
            f"pool_k {pool_k} exceeds the {x.timesteps} input timesteps"
        )
    rows = [
        x.stream.window_value(t * x.channels, x.channels)
        for t in range(x.timesteps)
    ]
    return _rows_to_tensor(_pool_rows(rows, pool, x.channels, counter), x.channels)


def fc_scores(
    x: PackedBitTensor,
    layer: BinaryFcLayer,
    counter: Optional[OpCounter] = None,
) -> list[int]:
    """Q16.16 class scores: score_scale * binary_dot + score_bias per class.

    The flatten order is the tensor's own time-major stream. Scores are
    exact 64-bit integers; no rounding happens after the offline Q16.16
    quantization of scale and bias.
    """
    if x.stream.bit_len != layer.in_bits:
        raise ValueError(
            f"input holds {x.stream.bit_len} bits, layer expects {layer.in_bits}"
        )
    n = layer.in_bits
    pad = x.stream.padded_bits
    valid = ((1 << n) - 1) << (pad - n)
    fullmask = (1 << pad) - 1
    xv = x.stream.value
    in_words = words_for_bits(n)
    scores = []
    for m in range(layer.n_classes):
        p = ((xv ^ layer.weights[m].value) ^ fullmask) & valid
        dot = 2 * p.bit_count() - n
        if counter is not None:
            counter.xnor_word_ops += in_words
            counter.popcount_ops += in_words
        scores.append(layer.score_scale[m] * dot + layer.score_bias[m])
    return scores


def predict(scores: Sequence[int]) -> int:
    """Index of the maximum score; ties break toward the lowest index."""
    if len(scores) == 0:
        raise ValueError("cannot take the argmax of an empty score vector")
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return best

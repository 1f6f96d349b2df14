"""Plain dense reference path for cross-checking the packed kernels.

Everything here works on ordinary +-1 integer arrays with straightforward
loops or numpy arithmetic: no packing, no XNOR, no popcount, no integer
threshold folding. The packed engine and this module must agree bit for bit
on every input; the engine is the product, this module is the judge.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .bitpack import PackedBitTensor, unpack
from .layers import (
    Q16_ONE,
    BinaryFcLayer,
    Direction,
    Int8ConvLayer,
    PoolSpec,
    ThresholdSpec,
)


def tensor_to_dense(x: PackedBitTensor) -> np.ndarray:
    """(T, C) int array of +-1 values in time-major order."""
    return np.array(unpack(x), dtype=np.int64).reshape(x.timesteps, x.channels)


def weights_to_dense(weights, k: int, c_in: int) -> np.ndarray:
    """(c_out, k, c_in) int array of +-1 filter taps."""
    rows = [2 * w.bits().astype(np.int64) - 1 for w in weights]
    return np.stack(rows).reshape(len(rows), k, c_in)


def sign_plus(v: float) -> int:
    """Sign with the tie sent to +1."""
    return 1 if v >= 0 else -1


def conv1d_reference(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Dense valid convolution, stride 1, exact integer arithmetic.

    x is (T, C_in), w is (C_out, K, C_in); the result is the raw (T_out,
    C_out) accumulator y(t, m) = sum_k sum_c w(m, k, c) * x(t + k, c).
    """
    x = np.asarray(x, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    c_out, k, c_in = w.shape
    if x.ndim != 2 or x.shape[1] != c_in:
        raise ValueError(f"input shape {x.shape} incompatible with filters {w.shape}")
    t_out = x.shape[0] - k + 1
    if t_out < 1:
        raise ValueError("input shorter than the kernel")
    wmat = w.reshape(c_out, k * c_in)
    out = np.empty((t_out, c_out), dtype=np.int64)
    for t in range(t_out):
        out[t] = wmat @ x[t : t + k].reshape(-1)
    return out


def batchnorm_sign_reference(
    y: np.ndarray,
    mu: Sequence[float],
    sigma: Sequence[float],
    gamma: Sequence[float],
    beta: Sequence[float],
) -> np.ndarray:
    """Float batchnorm then sign with tie to +1, per output channel.

    y is the raw (T, C) integer accumulator; the result is +-1.
    """
    y = np.asarray(y, dtype=np.float64)
    for s in sigma:
        if s <= 0:
            raise ValueError(f"sigma must be positive, got {s}")
    out = np.empty(y.shape, dtype=np.int64)
    for m in range(y.shape[1]):
        bn = gamma[m] * (y[:, m] - mu[m]) / sigma[m] + beta[m]
        out[:, m] = np.where(bn >= 0.0, 1, -1)
    return out


def threshold_sign_reference(
    y: np.ndarray, thresholds: Sequence[ThresholdSpec], n: int, raw: bool = False
) -> np.ndarray:
    """Apply folded integer thresholds to a raw accumulator tensor.

    For the binary path the spec compares the agreement count
    P = (y + N) / 2 (exact, same parity); for the int8 path (raw=True) it
    compares y itself.
    """
    y = np.asarray(y, dtype=np.int64)
    acc = y if raw else (y + n) // 2
    out = np.empty(y.shape, dtype=np.int64)
    for m, spec in enumerate(thresholds):
        if spec.direction is Direction.GEQ:
            hit = acc[:, m] >= spec.threshold
        else:
            hit = acc[:, m] <= spec.threshold
        out[:, m] = np.where(hit, 1, -1)
    return out


def maxpool_reference(x: np.ndarray, pool_k: int, pool_s: int) -> np.ndarray:
    """Dense max pool over +-1 values; a trailing partial window is dropped."""
    if pool_k != pool_s:
        raise ValueError("only pool_k == pool_s is supported")
    x = np.asarray(x)
    t_out = x.shape[0] // pool_k
    if t_out < 1:
        raise ValueError("pool window exceeds the input length")
    out = np.empty((t_out, x.shape[1]), dtype=np.int64)
    for t in range(t_out):
        out[t] = x[t * pool_k : (t + 1) * pool_k].max(axis=0)
    return out


def fc_reference(
    x: np.ndarray,
    w: np.ndarray,
    scale: Sequence[float],
    bias: Sequence[float],
) -> list[float]:
    """Float affine head: scale * <flatten(x), w_m> + bias per class."""
    flat = np.asarray(x, dtype=np.int64).reshape(-1)
    w = np.asarray(w, dtype=np.int64).reshape(len(scale), -1)
    if w.shape[1] != flat.size:
        raise ValueError(f"{flat.size} inputs for weight rows of {w.shape[1]}")
    return [
        float(scale[m]) * int(np.dot(flat, w[m])) + float(bias[m])
        for m in range(w.shape[0])
    ]


def predict_reference(scores: Sequence) -> int:
    """Argmax with ties to the lowest index, via a plain linear scan."""
    if len(scores) == 0:
        raise ValueError("cannot take the argmax of an empty score vector")
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return best


def forward_trace_reference(net, x) -> tuple[list[np.ndarray], list[float]]:
    """Dense forward pass: one +-1 array per stage plus the float scores.

    Consumes the same layer objects as the packed engine but evaluates them
    with dense arithmetic; pooling fused into a convolution is traced as its
    own stage, and the Q16.16 head parameters are interpreted as the reals
    they encode. Fractions with power-of-two denominators keep every float
    step exact, so the packed path must match this trace bit for bit.
    """
    stages: list[np.ndarray] = []
    if isinstance(x, PackedBitTensor):
        cur = tensor_to_dense(x)
    else:
        cur = np.asarray(x, dtype=np.int64)
    for layer in net.layers:
        if isinstance(layer, BinaryFcLayer):
            w = np.stack([2 * wt.bits().astype(np.int64) - 1 for wt in layer.weights])
            scale = [s / Q16_ONE for s in layer.score_scale]
            bias = [b / Q16_ONE for b in layer.score_bias]
            return stages, fc_reference(cur, w, scale, bias)
        if isinstance(layer, PoolSpec):
            cur = maxpool_reference(cur, layer.pool_k, layer.pool_s)
            stages.append(cur)
            continue
        w = weights_to_dense(layer.weights, layer.k, layer.c_in)
        acc = conv1d_reference(cur, w)
        raw = isinstance(layer, Int8ConvLayer)
        cur = threshold_sign_reference(
            acc, layer.thresholds, layer.k * layer.c_in, raw=raw
        )
        stages.append(cur)
        if layer.fused_pool is not None:
            cur = maxpool_reference(
                cur, layer.fused_pool.pool_k, layer.fused_pool.pool_s
            )
            stages.append(cur)
    raise ValueError("network has no fully-connected head")


def forward_reference(net, x) -> int:
    """Dense end-to-end pass returning the predicted class index."""
    _, scores = forward_trace_reference(net, x)
    return predict_reference(scores)


def rf_predict_reference(forest, features: Sequence[int]) -> int:
    """Recursive tree descent over the flattened forest arrays.

    Follows each tree from its root by recursion instead of the engine's
    iterative index walk, accumulates the 8-bit leaf distributions, and
    takes the lowest-index argmax.
    """
    totals = [0] * forest.n_classes

    def descend(i: int) -> int:
        node = forest.nodes[i]
        if node.feature_index < 0:
            return node.right_child
        if features[node.feature_index] <= node.threshold:
            return descend(i + 1)
        return descend(node.right_child)

    for root in forest.roots:
        probs = forest.leaves[descend(root)]
        for c in range(forest.n_classes):
            totals[c] += probs[c]
    return predict_reference(totals)

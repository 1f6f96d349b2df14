"""Network container, validation, size/op analysis, and model file formats.

A Network is an immutable sequence of layer descriptors over a declared
input shape. Validation walks the descriptor list once, computing the
(T, C) shape chain with T_out = T - K + 1 for convolutions and T / pool_k
for pools, and rejects anything the kernels cannot execute. The binary
"UBN1" format and the JSON interchange format serialize exactly the same
fields; loading either runs validation, so a loaded Network is always
runnable.

Serialized layout (all multi-byte fields little-endian): magic "UBN1",
version u16, input T u16, input C u16, input domain u8 (0 int8, 1 binary),
record count u16, then per record: type u8 (0 int8 conv, 1 binary conv,
2 pool, 3 fc), C_out u16, K u16, pool_s u16 (pool records only), fused-pool
flag u8, then per output channel threshold i32 + direction u8 (conv) or per
class score_scale i32 + score_bias i32 (fc), then the packed weights as u32
words, each filter word-aligned, MSB-first within a word. A conv record
with the fused-pool flag set is immediately followed by the pool record it
absorbs. Channel counts of inner layers are never stored twice: each
record's input shape is derived from the chain, so the format cannot even
express a mismatched chain.
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from .bitpack import (
    WORD_BITS,
    BitStream,
    PackedBitTensor,
    pack,
    words_for_bits,
)
from .errors import (
    BadMagicError,
    InterchangeError,
    TruncatedError,
    ValidationError,
    VersionError,
)
from .layers import (
    BinaryConvLayer,
    BinaryFcLayer,
    Direction,
    Int8ConvLayer,
    OpCounter,
    PoolSpec,
    ThresholdSpec,
    conv1d_binary,
    conv1d_int8,
    fc_scores,
    maxpool_binary,
)

MAGIC = b"UBN1"
FORMAT_VERSION = 1

_DOMAIN_CODES = {"int8": 0, "binary": 1}
_DOMAIN_NAMES = {v: k for k, v in _DOMAIN_CODES.items()}

_TYPE_INT8_CONV = 0
_TYPE_BINARY_CONV = 1
_TYPE_POOL = 2
_TYPE_FC = 3

LayerDescriptor = Union[Int8ConvLayer, BinaryConvLayer, PoolSpec, BinaryFcLayer]


@dataclass(frozen=True)
class InputSpec:
    """Declared model input: T timesteps by C channels, int8 or binary."""

    timesteps: int
    channels: int
    domain: str

    def __post_init__(self):
        if self.domain not in _DOMAIN_CODES:
            raise ValueError(f"unknown input domain {self.domain!r}")
        for name, v in (("timesteps", self.timesteps), ("channels", self.channels)):
            if not 1 <= v <= 0xFFFF:
                raise ValueError(f"input {name} {v} outside [1, 65535]")


@dataclass(frozen=True)
class Network:
    """Immutable layer stack; shareable across threads once built."""

    input_spec: InputSpec
    layers: tuple[LayerDescriptor, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def n_classes(self) -> int:
        head = self.layers[-1] if self.layers else None
        if not isinstance(head, BinaryFcLayer):
            raise ValidationError("network has no fully-connected head")
        return head.n_classes


def validate(net: Network) -> list[tuple[int, int]]:
    """Check the descriptor chain and return the per-stage (T, C) shapes.

    The returned chain starts at the input shape and appends one entry per
    conv/pool descriptor (a conv with a fused pool contributes its pooled
    output shape). The fully-connected head terminates the chain. Every
    violation names the offending layer index.
    """

    def bad(i: int, msg: str):
        raise ValidationError(f"layer {i}: {msg}", layer_index=i)

    chain = [(net.input_spec.timesteps, net.input_spec.channels)]
    fc_seen = False
    for i, layer in enumerate(net.layers):
        if fc_seen:
            bad(i, "layers after the fully-connected head")
        t, c = chain[-1]
        if isinstance(layer, BinaryFcLayer):
            if layer.in_bits != t * c:
                bad(i, f"head expects {layer.in_bits} bits, chain provides {t * c}")
            fc_seen = True
        elif isinstance(layer, Int8ConvLayer):
            if i != 0 or net.input_spec.domain != "int8":
                bad(i, "int8 convolution is only valid as the first layer "
                       "of an int8-input network")
            chain.append(_conv_out_shape(layer, t, c, i, bad))
        elif isinstance(layer, BinaryConvLayer):
            if i == 0 and net.input_spec.domain == "int8":
                bad(i, "int8 input must enter an int8 convolution first")
            chain.append(_conv_out_shape(layer, t, c, i, bad))
        elif isinstance(layer, PoolSpec):
            if i == 0 and net.input_spec.domain == "int8":
                bad(i, "int8 input must enter an int8 convolution first")
            if layer.pool_k > t:
                bad(i, f"pool_k {layer.pool_k} exceeds the {t} input timesteps")
            chain.append((t // layer.pool_k, c))
        else:
            bad(i, f"unsupported layer type {type(layer).__name__}")
    if not fc_seen:
        raise ValidationError(
            "network has no fully-connected head", layer_index=len(net.layers)
        )
    return chain


def _conv_out_shape(layer, t, c, i, bad):
    if layer.c_in != c:
        bad(i, f"convolution expects {layer.c_in} channels, chain provides {c}")
    if t < layer.k:
        bad(i, f"input of {t} timesteps shorter than kernel {layer.k}")
    t_out = t - layer.k + 1
    if layer.fused_pool is not None:
        if layer.fused_pool.pool_k > t_out:
            bad(i, f"fused pool_k {layer.fused_pool.pool_k} exceeds the "
                   f"{t_out} convolution timesteps")
        t_out //= layer.fused_pool.pool_k
    return (t_out, layer.c_out)


def _pad32(channels: int) -> int:
    return ((channels + 31) // 32) * 32


@dataclass(frozen=True)
class LayerFootprint:
    """Storage cost of one layer, in bits."""

    kind: str
    raw_weight_bits: int
    aligned_weight_bits: int
    threshold_bits: int
    activation_buffer_bits: int
    padded32_weight_bits: int


@dataclass(frozen=True)
class FootprintReport:
    """Per-layer storage costs plus whole-network totals."""

    per_layer: tuple[LayerFootprint, ...]

    def _total(self, field: str) -> int:
        return sum(getattr(lf, field) for lf in self.per_layer)

    @property
    def raw_weight_bits(self) -> int:
        return self._total("raw_weight_bits")

    @property
    def aligned_weight_bits(self) -> int:
        return self._total("aligned_weight_bits")

    @property
    def threshold_bits(self) -> int:
        return self._total("threshold_bits")

    @property
    def activation_buffer_bits(self) -> int:
        return self._total("activation_buffer_bits")

    @property
    def padded32_weight_bits(self) -> int:
        return self._total("padded32_weight_bits")


# Serialized parameter widths, in bits: a conv channel stores an i32
# threshold plus a direction byte; an fc class stores two i32 Q16.16 values.
_CONV_THRESHOLD_BITS = 40
_FC_PARAM_BITS = 64


def footprint(net: Network) -> FootprintReport:
    """Compute raw, word-aligned, and padded-to-32-channel storage costs.

    padded32_weight_bits prices the same layer with every channel count
    rounded up to a multiple of 32, the granularity a word-constrained
    kernel library would force; the classifier head pads its input channel
    dimension only, since class count is not a hardware channel count.
    activation_buffer_bits is the layer's output buffer (packed bits for
    conv/pool stages, 64-bit scores for the head).
    """
    chain = validate(net)
    per = []
    pos = 0
    for layer in net.layers:
        t_in, c_in = chain[pos]
        if isinstance(layer, BinaryFcLayer):
            per.append(LayerFootprint(
                kind="fc",
                raw_weight_bits=layer.in_bits * layer.n_classes,
                aligned_weight_bits=(
                    layer.n_classes * words_for_bits(layer.in_bits) * WORD_BITS
                ),
                threshold_bits=layer.n_classes * _FC_PARAM_BITS,
                activation_buffer_bits=layer.n_classes * 64,
                padded32_weight_bits=t_in * _pad32(c_in) * layer.n_classes,
            ))
            continue
        t_out, c_out = chain[pos + 1]
        pos += 1
        if isinstance(layer, PoolSpec):
            per.append(LayerFootprint(
                kind="pool",
                raw_weight_bits=0,
                aligned_weight_bits=0,
                threshold_bits=0,
                activation_buffer_bits=t_out * c_out,
                padded32_weight_bits=0,
            ))
            continue
        kind = "int8_conv" if isinstance(layer, Int8ConvLayer) else "binary_conv"
        per.append(LayerFootprint(
            kind=kind,
            raw_weight_bits=layer.k * layer.c_in * layer.c_out,
            aligned_weight_bits=(
                layer.c_out * words_for_bits(layer.k * layer.c_in) * WORD_BITS
            ),
            threshold_bits=layer.c_out * _CONV_THRESHOLD_BITS,
            activation_buffer_bits=t_out * c_out,
            padded32_weight_bits=layer.k * _pad32(layer.c_in) * _pad32(layer.c_out),
        ))
    return FootprintReport(per_layer=tuple(per))


@dataclass(frozen=True)
class OpCountReport:
    """Closed-form word-operation counts for one inference."""

    xnor_word_ops: int
    popcount_ops: int
    threshold_compares: int
    or_ops: int
    int8_mac_equivalents: int

    def as_dict(self) -> dict[str, int]:
        return {
            "xnor_word_ops": self.xnor_word_ops,
            "popcount_ops": self.popcount_ops,
            "threshold_compares": self.threshold_compares,
            "or_ops": self.or_ops,
            "int8_mac_equivalents": self.int8_mac_equivalents,
        }


def count_ops(net: Network) -> OpCountReport:
    """Derive operation counts from shapes alone; no execution involved.

    The model counts 32-bit word operations: a binary conv costs
    T_out x C_out x ceil(K x C_in / 32) XNOR and popcount words plus one
    compare per output element (before pooling), pooling costs one OR per
    word of every row folded into a complete pool group, the int8 layer
    counts multiply-accumulate equivalents, and the head costs one XNOR and
    popcount per weight word per class. These must match the kernels'
    instrumented counters exactly.
    """
    chain = validate(net)
    xnor = popc = cmps = ors = macs = 0
    pos = 0
    for layer in net.layers:
        t_in, c_in = chain[pos]
        if isinstance(layer, BinaryFcLayer):
            words = words_for_bits(layer.in_bits)
            xnor += layer.n_classes * words
            popc += layer.n_classes * words
            continue
        pos += 1
        if isinstance(layer, PoolSpec):
            t_pool = t_in // layer.pool_k
            ors += t_pool * layer.pool_k * words_for_bits(c_in)
            continue
        t_conv = t_in - layer.k + 1
        cmps += t_conv * layer.c_out
        if isinstance(layer, Int8ConvLayer):
            macs += t_conv * layer.c_out * layer.k * layer.c_in
        else:
            words = words_for_bits(layer.k * layer.c_in)
            xnor += t_conv * layer.c_out * words
            popc += t_conv * layer.c_out * words
        if layer.fused_pool is not None:
            t_pool = t_conv // layer.fused_pool.pool_k
            ors += t_pool * layer.fused_pool.pool_k * words_for_bits(layer.c_out)
    return OpCountReport(
        xnor_word_ops=xnor,
        popcount_ops=popc,
        threshold_compares=cmps,
        or_ops=ors,
        int8_mac_equivalents=macs,
    )


def _prepare_input(net: Network, x) -> Union[np.ndarray, PackedBitTensor]:
    spec = net.input_spec
    if spec.domain == "int8":
        arr = np.asarray(x)
        if arr.shape != (spec.timesteps, spec.channels):
            raise ValueError(
                f"input shape {arr.shape} does not match the model input "
                f"({spec.timesteps}, {spec.channels})"
            )
        return arr
    if isinstance(x, PackedBitTensor):
        if (x.timesteps, x.channels) != (spec.timesteps, spec.channels):
            raise ValueError(
                f"input shape ({x.timesteps}, {x.channels}) does not match "
                f"the model input ({spec.timesteps}, {spec.channels})"
            )
        return x
    arr = np.asarray(x)
    if arr.shape != (spec.timesteps, spec.channels):
        raise ValueError(
            f"input shape {arr.shape} does not match the model input "
            f"({spec.timesteps}, {spec.channels})"
        )
    return pack(arr.reshape(-1).tolist(), (spec.timesteps, spec.channels))


def _execution_plan(net: Network) -> list[LayerDescriptor]:
    """Fold standalone pools into the conv they follow, when possible."""
    plan: list[LayerDescriptor] = []
    for layer in net.layers:
        prev = plan[-1] if plan else None
        if (
            isinstance(layer, PoolSpec)
            and isinstance(prev, BinaryConvLayer)
            and prev.fused_pool is None
        ):
            plan[-1] = replace(prev, fused_pool=layer)
            continue
        plan.append(layer)
    return plan


def forward(net: Network, x, counter: Optional[OpCounter] = None) -> list[int]:
    """Run one inference over the packed kernels; returns Q16.16 scores.

    For int8-domain models x is a (T, C) integer array; for binary-domain
    models it is a PackedBitTensor or a dense +-1 array. Standalone pool
    descriptors are fused into the preceding convolution before execution,
    so the un-pooled activation is never materialized.
    """
    validate(net)
    cur = _prepare_input(net, x)
    for layer in _execution_plan(net):
        if isinstance(layer, BinaryFcLayer):
            return fc_scores(cur, layer, counter)
        if isinstance(layer, Int8ConvLayer):
            cur = conv1d_int8(cur, layer, counter)
        elif isinstance(layer, BinaryConvLayer):
            cur = conv1d_binary(cur, layer, counter)
        else:
            cur = maxpool_binary(cur, layer.pool_k, layer.pool_s, counter)
    raise ValidationError("network has no fully-connected head")


def forward_trace(net: Network, x) -> tuple[list[PackedBitTensor], list[int]]:
    """Unfused forward pass exposing every intermediate activation.

    Fused pools execute as separate pooling stages so each conv output is
    observable; the trace aligns stage for stage with the dense reference
    path. forward() and forward_trace() must produce identical scores.
    """
    validate(net)
    cur = _prepare_input(net, x)
    stages: list[PackedBitTensor] = []
    for layer in net.layers:
        if isinstance(layer, BinaryFcLayer):
            return stages, fc_scores(cur, layer)
        if isinstance(layer, Int8ConvLayer):
            cur = conv1d_int8(cur, replace(layer, fused_pool=None))
        elif isinstance(layer, BinaryConvLayer):
            cur = conv1d_binary(cur, replace(layer, fused_pool=None))
        elif isinstance(layer, PoolSpec):
            cur = maxpool_binary(cur, layer.pool_k, layer.pool_s)
            stages.append(cur)
            continue
        stages.append(cur)
        if layer.fused_pool is not None:
            cur = maxpool_binary(cur, layer.fused_pool.pool_k, layer.fused_pool.pool_s)
            stages.append(cur)
    raise ValidationError("network has no fully-connected head")


# --- binary format ---------------------------------------------------------


def _filter_bytes(stream: BitStream) -> bytes:
    return struct.pack(f"<{stream.n_words}I", *stream.words)


def _u16(value: int, what: str) -> int:
    if not 0 <= value <= 0xFFFF:
        raise ValidationError(f"{what} {value} exceeds the u16 format limit")
    return value


def save_bytes(net: Network) -> bytes:
    """Serialize a validated network to UBN1 bytes."""
    chain = validate(net)
    for i, layer in enumerate(net.layers):
        if isinstance(layer, BinaryFcLayer):
            _u16(layer.n_classes, f"layer {i}: class count")
        elif isinstance(layer, PoolSpec):
            _u16(layer.pool_k, f"layer {i}: pool_k")
        else:
            _u16(layer.c_out, f"layer {i}: channel count")
            _u16(layer.k, f"layer {i}: kernel size")
            if layer.fused_pool is not None:
                _u16(layer.fused_pool.pool_k, f"layer {i}: pool_k")
    out = bytearray()
    out += MAGIC
    spec = net.input_spec
    records = sum(
        2 if isinstance(l, BinaryConvLayer) and l.fused_pool is not None else 1
        for l in net.layers
    )
    out += struct.pack(
        "<HHHBH",
        FORMAT_VERSION,
        spec.timesteps,
        spec.channels,
        _DOMAIN_CODES[spec.domain],
        records,
    )
    pos = 0
    for layer in net.layers:
        if isinstance(layer, BinaryFcLayer):
            out += struct.pack("<BHHB", _TYPE_FC, layer.n_classes, 0, 0)
            for m in range(layer.n_classes):
                out += struct.pack("<ii", layer.score_scale[m], layer.score_bias[m])
            for w in layer.weights:
                out += _filter_bytes(w)
            continue
        _, c_cur = chain[pos]
        pos += 1
        if isinstance(layer, PoolSpec):
            out += struct.pack(
                "<BHHHB", _TYPE_POOL, c_cur, layer.pool_k, layer.pool_s, 0
            )
            continue
        code = _TYPE_INT8_CONV if isinstance(layer, Int8ConvLayer) else _TYPE_BINARY_CONV
        flag = 0 if layer.fused_pool is None else 1
        out += struct.pack("<BHHB", code, layer.c_out, layer.k, flag)
        for spec_t in layer.thresholds:
            out += struct.pack("<iB", spec_t.threshold, int(spec_t.direction))
        for w in layer.weights:
            out += _filter_bytes(w)
        if layer.fused_pool is not None:
            out += struct.pack(
                "<BHHHB",
                _TYPE_POOL,
                layer.c_out,
                layer.fused_pool.pool_k,
                layer.fused_pool.pool_s,
                0,
            )
    return bytes(out)


def save(net: Network, path) -> None:
    data = save_bytes(net)
    with open(path, "wb") as f:
        f.write(data)


class _Reader:
    """Byte cursor that converts overruns into truncation errors."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(
                f"file ends at byte {len(self.data)}, "
                f"needed {self.pos + n}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.data)


def load_bytes(data: bytes) -> Network:
    """Parse UBN1 bytes into a validated Network."""
    if len(data) < len(MAGIC):
        raise TruncatedError(f"file of {len(data)} bytes is shorter than the magic")
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    r = _Reader(data)
    r.take(len(MAGIC))
    version, t, c, domain_code, n_records = r.unpack("<HHHBH")
    if version != FORMAT_VERSION:
        raise VersionError(f"format version {version}, reader speaks {FORMAT_VERSION}")
    if domain_code not in _DOMAIN_NAMES:
        raise ValidationError(f"unknown input domain code {domain_code}")
    try:
        input_spec = InputSpec(t, c, _DOMAIN_NAMES[domain_code])
    except ValueError as e:
        raise ValidationError(str(e)) from e

    layers: list[LayerDescriptor] = []
    cur_t, cur_c = t, c
    consumed = 0
    while consumed < n_records:
        layer, used, cur_t, cur_c = _read_record(
            r, consumed, cur_t, cur_c, n_records, len(layers)
        )
        layers.append(layer)
        consumed += used
    if not r.exhausted:
        raise ValidationError(
            f"{len(r.data) - r.pos} trailing bytes after the last record"
        )
    net = Network(input_spec=input_spec, layers=tuple(layers))
    validate(net)
    return net


def _read_record(r: _Reader, consumed, cur_t, cur_c, n_records, layer_index):
    (rtype,) = r.unpack("<B")
    if rtype == _TYPE_POOL:
        c_out, pool_k, pool_s, flag = r.unpack("<HHHB")
        if flag != 0:
            raise ValidationError(
                f"layer {layer_index}: pool record carries a fused-pool flag",
                layer_index=layer_index,
            )
        if c_out != cur_c:
            raise ValidationError(
                f"layer {layer_index}: pool record declares {c_out} channels, "
                f"chain provides {cur_c}",
                layer_index=layer_index,
            )
        pool = _build(lambda: PoolSpec(pool_k, pool_s), layer_index)
        if pool.pool_k > cur_t:
            raise ValidationError(
                f"layer {layer_index}: pool_k {pool.pool_k} exceeds the "
                f"{cur_t} input timesteps",
                layer_index=layer_index,
            )
        return pool, 1, cur_t // pool.pool_k, cur_c
    if rtype == _TYPE_FC:
        n_classes, k, flag = r.unpack("<HHB")
        if k != 0 or flag != 0:
            raise ValidationError(
                f"layer {layer_index}: head record carries nonzero K or flag",
                layer_index=layer_index,
            )
        scales, biases = [], []
        for _ in range(n_classes):
            s, b = r.unpack("<ii")
            scales.append(s)
            biases.append(b)
        in_bits = cur_t * cur_c
        weights = _read_filters(r, n_classes, in_bits)
        fc = _build(
            lambda: BinaryFcLayer(
                in_bits=in_bits,
                n_classes=n_classes,
                weights=weights,
                score_scale=tuple(scales),
                score_bias=tuple(biases),
            ),
            layer_index,
        )
        return fc, 1, cur_t, cur_c
    if rtype in (_TYPE_INT8_CONV, _TYPE_BINARY_CONV):
        c_out, k, flag = r.unpack("<HHB")
        if flag not in (0, 1):
            raise ValidationError(
                f"layer {layer_index}: fused-pool flag {flag} is not 0 or 1",
                layer_index=layer_index,
            )
        if k > cur_t:
            raise ValidationError(
                f"layer {layer_index}: input of {cur_t} timesteps shorter "
                f"than kernel {k}",
                layer_index=layer_index,
            )
        thresholds = []
        for _ in range(c_out):
            th, d = r.unpack("<iB")
            if d not in (0, 1):
                raise ValidationError(
                    f"layer {layer_index}: direction code {d} is not 0 or 1",
                    layer_index=layer_index,
                )
            thresholds.append(ThresholdSpec(th, Direction(d)))
        weights = _read_filters(r, c_out, k * cur_c)
        used = 1
        fused = None
        if flag == 1:
            if consumed + 1 >= n_records:
                raise ValidationError(
                    f"layer {layer_index}: fused-pool flag set on the last record",
                    layer_index=layer_index,
                )
            (ptype,) = r.unpack("<B")
            if ptype != _TYPE_POOL:
                raise ValidationError(
                    f"layer {layer_index}: fused-pool flag set but followed "
                    f"by record type {ptype}",
                    layer_index=layer_index,
                )
            pc_out, pool_k, pool_s, pflag = r.unpack("<HHHB")
            if pflag != 0 or pc_out != c_out:
                raise ValidationError(
                    f"layer {layer_index}: fused pool record is inconsistent "
                    f"with its convolution",
                    layer_index=layer_index,
                )
            fused = _build(lambda: PoolSpec(pool_k, pool_s), layer_index)
            if fused.pool_k > cur_t - k + 1:
                raise ValidationError(
                    f"layer {layer_index}: fused pool_k {fused.pool_k} exceeds "
                    f"the {cur_t - k + 1} convolution timesteps",
                    layer_index=layer_index,
                )
            used = 2
        cls = Int8ConvLayer if rtype == _TYPE_INT8_CONV else BinaryConvLayer
        conv = _build(
            lambda: cls(
                c_in=cur_c,
                c_out=c_out,
                k=k,
                weights=weights,
                thresholds=tuple(thresholds),
                fused_pool=fused,
            ),
            layer_index,
        )
        out_t = cur_t - k + 1
        if fused is not None:
            out_t //= fused.pool_k
        return conv, used, out_t, c_out
    raise ValidationError(
        f"layer {layer_index}: unknown record type {rtype}", layer_index=layer_index
    )


def _read_filters(r: _Reader, count: int, bit_len: int) -> tuple[BitStream, ...]:
    n_words = words_for_bits(bit_len)
    filters = []
    for _ in range(count):
        words = r.unpack(f"<{n_words}I") if n_words else ()
        filters.append(BitStream.from_words(words, bit_len))
    return tuple(filters)


def _build(ctor, layer_index: int):
    """Turn construction-time ValueErrors into indexed validation errors."""
    try:
        return ctor()
    except ValueError as e:
        raise ValidationError(
            f"layer {layer_index}: {e}", layer_index=layer_index
        ) from e


def load(path) -> Network:
    with open(path, "rb") as f:
        data = f.read()
    return load_bytes(data)


# --- JSON interchange ------------------------------------------------------


def _weights_b64(weights) -> str:
    return base64.b64encode(b"".join(_filter_bytes(w) for w in weights)).decode("ascii")


def network_to_json(net: Network) -> dict:
    """Mirror the binary format as a JSON-serializable dict.

    Weights are the base64 of the same little-endian u32 words the binary
    format stores, filters concatenated in order.
    """
    validate(net)
    layers = []
    for layer in net.layers:
        if isinstance(layer, BinaryFcLayer):
            layers.append({
                "type": "fc",
                "n_classes": layer.n_classes,
                "score_scale": list(layer.score_scale),
                "score_bias": list(layer.score_bias),
                "weights": _weights_b64(layer.weights),
            })
        elif isinstance(layer, PoolSpec):
            layers.append({
                "type": "pool",
                "pool_k": layer.pool_k,
                "pool_s": layer.pool_s,
            })
        else:
            entry = {
                "type": "int8_conv" if isinstance(layer, Int8ConvLayer) else "binary_conv",
                "c_out": layer.c_out,
                "k": layer.k,
                "thresholds": [
                    {"threshold": s.threshold,
                     "direction": "geq" if s.direction is Direction.GEQ else "leq"}
                    for s in layer.thresholds
                ],
                "weights": _weights_b64(layer.weights),
            }
            if layer.fused_pool is not None:
                entry["fused_pool"] = {
                    "pool_k": layer.fused_pool.pool_k,
                    "pool_s": layer.fused_pool.pool_s,
                }
            layers.append(entry)
    return {
        "kind": "network",
        "version": FORMAT_VERSION,
        "input": {
            "timesteps": net.input_spec.timesteps,
            "channels": net.input_spec.channels,
            "domain": net.input_spec.domain,
        },
        "layers": layers,
    }


def _want(obj, key, kinds, path, what):
    if not isinstance(obj, dict):
        raise InterchangeError(f"expected an object, got {type(obj).__name__}", path)
    if key not in obj:
        raise InterchangeError(f"missing {what}", f"{path}.{key}" if path else key)
    v = obj[key]
    if kinds is bool:
        ok = isinstance(v, bool)
    elif kinds is int:
        ok = isinstance(v, int) and not isinstance(v, bool)
    else:
        ok = isinstance(v, kinds)
    if not ok:
        raise InterchangeError(
            f"expected {what}, got {type(v).__name__}",
            f"{path}.{key}" if path else key,
        )
    return v


def _int_list(obj, key, path):
    vals = _want(obj, key, list, path, "an integer array")
    p = f"{path}.{key}" if path else key
    for i, v in enumerate(vals):
        if not isinstance(v, int) or isinstance(v, bool):
            raise InterchangeError("expected an integer", f"{p}[{i}]")
    return vals


def _decode_weights(obj, path, count, bit_len):
    text = _want(obj, "weights", str, path, "a base64 string")
    wpath = f"{path}.weights"
    try:
        raw = base64.b64decode(text, validate=True)
    except Exception as e:
        raise InterchangeError(f"invalid base64: {e}", wpath) from None
    n_words = words_for_bits(bit_len)
    if len(raw) != count * n_words * 4:
        raise InterchangeError(
            f"{len(raw)} weight bytes, expected {count * n_words * 4} "
            f"({count} filters of {n_words} words)",
            wpath,
        )
    filters = []
    for i in range(count):
        words = struct.unpack(f"<{n_words}I", raw[i * n_words * 4 : (i + 1) * n_words * 4])
        try:
            filters.append(BitStream.from_words(words, bit_len))
        except ValueError as e:
            raise InterchangeError(str(e), wpath) from None
    return tuple(filters)


def _pool_from_json(obj, path) -> PoolSpec:
    pool_k = _want(obj, "pool_k", int, path, "an integer")
    pool_s = _want(obj, "pool_s", int, path, "an integer")
    try:
        return PoolSpec(pool_k, pool_s)
    except ValueError as e:
        raise InterchangeError(str(e), path) from None


def network_from_json(obj) -> Network:
    """Build and validate a Network directly from interchange JSON."""
    if not isinstance(obj, dict):
        raise InterchangeError(f"expected an object, got {type(obj).__name__}")
    kind = _want(obj, "kind", str, "", "a string")
    if kind != "network":
        raise InterchangeError(f"expected kind 'network', got {kind!r}", "kind")
    version = _want(obj, "version", int, "", "an integer")
    if version != FORMAT_VERSION:
        raise InterchangeError(
            f"version {version}, reader speaks {FORMAT_VERSION}", "version"
        )
    inp = _want(obj, "input", dict, "", "an object")
    t = _want(inp, "timesteps", int, "input", "an integer")
    c = _want(inp, "channels", int, "input", "an integer")
    domain = _want(inp, "domain", str, "input", "a string")
    try:
        input_spec = InputSpec(t, c, domain)
    except ValueError as e:
        raise InterchangeError(str(e), "input") from None

    entries = _want(obj, "layers", list, "", "an array")
    layers: list[LayerDescriptor] = []
    cur_t, cur_c = t, c
    for i, entry in enumerate(entries):
        path = f"layers[{i}]"
        ltype = _want(entry, "type", str, path, "a string")
        if ltype == "pool":
            pool = _pool_from_json(entry, path)
            layers.append(pool)
            cur_t //= pool.pool_k
        elif ltype == "fc":
            n_classes = _want(entry, "n_classes", int, path, "an integer")
            scales = _int_list(entry, "score_scale", path)
            biases = _int_list(entry, "score_bias", path)
            in_bits = cur_t * cur_c
            weights = _decode_weights(entry, path, n_classes, in_bits)
            try:
                layers.append(BinaryFcLayer(
                    in_bits=in_bits,
                    n_classes=n_classes,
                    weights=weights,
                    score_scale=tuple(scales),
                    score_bias=tuple(biases),
                ))
            except ValueError as e:
                raise InterchangeError(str(e), path) from None
        elif ltype in ("int8_conv", "binary_conv"):
            c_out = _want(entry, "c_out", int, path, "an integer")
            k = _want(entry, "k", int, path, "an integer")
            specs = _want(entry, "thresholds", list, path, "an array")
            thresholds = []
            for j, s in enumerate(specs):
                tpath = f"{path}.thresholds[{j}]"
                th = _want(s, "threshold", int, tpath, "an integer")
                d = _want(s, "direction", str, tpath, "a string")
                if d not in ("geq", "leq"):
                    raise InterchangeError(
                        f"direction {d!r} is not 'geq' or 'leq'",
                        f"{tpath}.direction",
                    )
                try:
                    thresholds.append(ThresholdSpec(
                        th, Direction.GEQ if d == "geq" else Direction.LEQ
                    ))
                except ValueError as e:
                    raise InterchangeError(str(e), tpath) from None
            fused = None
            if "fused_pool" in entry and entry["fused_pool"] is not None:
                fused = _pool_from_json(
                    _want(entry, "fused_pool", dict, path, "an object"),
                    f"{path}.fused_pool",
                )
            weights = _decode_weights(entry, path, c_out, k * cur_c)
            cls = Int8ConvLayer if ltype == "int8_conv" else BinaryConvLayer
            try:
                layers.append(cls(
                    c_in=cur_c,
                    c_out=c_out,
                    k=k,
                    weights=weights,
                    thresholds=tuple(thresholds),
                    fused_pool=fused,
                ))
            except ValueError as e:
                raise InterchangeError(str(e), path) from None
            cur_t = cur_t - k + 1
            if fused is not None:
                cur_t //= fused.pool_k
            cur_c = c_out
        else:
            raise InterchangeError(
                f"unknown layer type {ltype!r}", f"{path}.type"
            )
    net = Network(input_spec=input_spec, layers=tuple(layers))
    try:
        validate(net)
    except ValidationError as e:
        idx = e.layer_index
        where = f"layers[{idx}]" if idx is not None and idx < len(entries) else "layers"
        raise InterchangeError(str(e), where) from None
    return net


def network_json_dumps(net: Network) -> str:
    """Canonical interchange text: sorted keys, no insignificant whitespace."""
    return json.dumps(network_to_json(net), sort_keys=True, separators=(",", ":"))

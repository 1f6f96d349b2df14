"""Bit-exact inference for ultra-compact 1D binary neural networks.

Weights and activations live in {-1, +1}, packed one bit each (1 for +1)
into 32-bit words, time-major. Convolutions run as XNOR + popcount against
precomputed integer thresholds, max pooling as bitwise OR, and the
classifier head as Q16.16 integer affine scores. A quantized random-forest
baseline, a dense reference oracle, storage/op analyzers, and binary/JSON
model formats round out the package.
"""

from .bitpack import (
    WORD_BITS,
    BitStream,
    PackedBitTensor,
    binary_dot,
    extract_window,
    leftover_mask,
    pack,
    popcount_sum,
    unpack,
    words_for_bits,
)
from .errors import (
    BadMagicError,
    FormatError,
    InterchangeError,
    MalformedForestError,
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
    fold_batchnorm_binary,
    maxpool_binary,
    predict,
)
from .model import (
    FootprintReport,
    InputSpec,
    LayerFootprint,
    Network,
    OpCountReport,
    count_ops,
    footprint,
    forward,
    forward_trace,
    load,
    network_from_json,
    network_to_json,
    save,
    validate,
)
from .rf import (
    FeatureQuantizer,
    Forest,
    RfNode,
    extract_features,
    forest_from_json,
    forest_to_json,
    load_forest,
    quantize_features,
    rf_predict,
    save_forest,
    validate_forest,
)

__version__ = "0.1.0"

__all__ = [
    "WORD_BITS",
    "BitStream",
    "PackedBitTensor",
    "binary_dot",
    "extract_window",
    "leftover_mask",
    "pack",
    "popcount_sum",
    "unpack",
    "words_for_bits",
    "BadMagicError",
    "FormatError",
    "InterchangeError",
    "MalformedForestError",
    "TruncatedError",
    "ValidationError",
    "VersionError",
    "BinaryConvLayer",
    "BinaryFcLayer",
    "Direction",
    "Int8ConvLayer",
    "OpCounter",
    "PoolSpec",
    "ThresholdSpec",
    "conv1d_binary",
    "conv1d_int8",
    "fc_scores",
    "fold_batchnorm_binary",
    "maxpool_binary",
    "predict",
    "FootprintReport",
    "InputSpec",
    "LayerFootprint",
    "Network",
    "OpCountReport",
    "count_ops",
    "footprint",
    "forward",
    "forward_trace",
    "load",
    "network_from_json",
    "network_to_json",
    "save",
    "validate",
    "FeatureQuantizer",
    "Forest",
    "RfNode",
    "extract_features",
    "forest_from_json",
    "forest_to_json",
    "load_forest",
    "quantize_features",
    "rf_predict",
    "save_forest",
    "validate_forest",
]

"""Training and export for ultra-compact binarized models.

Train a straight-through-estimator binarized conv network or a quantized
random forest on synthetic multi-channel windows, then export interchange
JSON a bit-exact integer inference engine can convert and run, plus an
eval manifest of held-out inputs and the exporter's own integer-semantics
predictions for cross-implementation parity checks.
"""

from .bnn import BnnModel, TrainingDivergedError, TrainResult, train_bnn
from .config import ConfigError, TrainConfig, parse_architecture
from .data import Dataset, make_dataset, make_windows
from .export import (
    ExportBundle,
    ExportError,
    build_manifest,
    export_bnn,
    filters_b64,
    fold_binary_channel,
    fold_int8_channel,
    integer_network_predictions,
    manifest_windows,
    network_document,
    pack_pm1_words,
)
from .rf import (
    RfResult,
    calibrate_quantizer,
    descend_flat,
    export_rf,
    extract_features_batch,
    flatten_tree,
    forest_document,
    predict_forest_quantized,
    quantize_distribution,
    quantize_features_batch,
    quantize_value,
    train_rf,
)

__all__ = [
    "BnnModel",
    "ConfigError",
    "Dataset",
    "ExportBundle",
    "ExportError",
    "RfResult",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "build_manifest",
    "calibrate_quantizer",
    "descend_flat",
    "export_bnn",
    "export_rf",
    "extract_features_batch",
    "filters_b64",
    "flatten_tree",
    "fold_binary_channel",
    "fold_int8_channel",
    "forest_document",
    "integer_network_predictions",
    "make_dataset",
    "make_windows",
    "manifest_windows",
    "network_document",
    "pack_pm1_words",
    "parse_architecture",
    "predict_forest_quantized",
    "quantize_distribution",
    "quantize_features_batch",
    "quantize_value",
    "train_rf",
]

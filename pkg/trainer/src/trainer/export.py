"""Export trained networks to interchange JSON with a parity manifest.

The exported document is the contract: after this module writes it, no
float from training survives.  Weights binarize by sign (ties at exactly
0.0 go to +1) and pack MSB-first into little-endian 32-bit words, one
padded word run per filter.  Each batchnorm+sign pair folds into a single
integer threshold comparison, derived by exhaustively sweeping the float
batchnorm-sign predicate over every accumulator value the layer can
produce — the pass set of a monotone predicate is a contiguous up-set
(gamma > 0, GEQ) or down-set (gamma < 0, LEQ), and the derived comparison
is re-checked against the full sweep before anything is written.

The manifest carries held-out inputs together with predictions computed by
re-reading the exported document under pure integer semantics, so a
downstream engine can check parity against the document alone.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass

import numpy as np

from .config import ConvStage, FcStage, PoolStage

INTERCHANGE_VERSION = 1
WORD_BITS = 32
Q16_ONE = 1 << 16
I32_MIN = -(1 << 31)
I32_MAX = (1 << 31) - 1


class ExportError(ValueError):
    """A trained model that cannot be expressed in the deployment format."""


# --- bit packing ------------------------------------------------------------


def _words_for_bits(n: int) -> int:
    return (n + WORD_BITS - 1) // WORD_BITS


def pack_pm1_words(values: np.ndarray) -> np.ndarray:
    """Pack a 1D +-1 array into u32 words, MSB-first, +1 <-> bit 1."""
    bits = np.asarray(values).reshape(-1)
    n_words = _words_for_bits(bits.size)
    padded = np.zeros(n_words * WORD_BITS, dtype=np.uint32)
    padded[: bits.size] = bits > 0
    shifts = (WORD_BITS - 1 - np.arange(WORD_BITS)).astype(np.uint32)
    return np.bitwise_or.reduce(
        padded.reshape(n_words, WORD_BITS) << shifts, axis=1
    )


def filters_b64(filters: np.ndarray) -> str:
    """Base64 of concatenated per-filter little-endian u32 word runs.

    ``filters`` is (n_filters, k, c_in) of +-1; each filter's bits are laid
    out tap-major (all channels of tap 0, then tap 1, ...) and padded to a
    whole number of words before the next filter begins.
    """
    runs = [
        pack_pm1_words(f).astype("<u4").tobytes() for f in filters
    ]
    return base64.b64encode(b"".join(runs)).decode("ascii")


def _filters_from_b64(
    text: str, n_filters: int, window_bits: int, where: str
) -> np.ndarray:
    """Decode the packed weight payload back to (n_filters, window_bits) +-1."""
    try:
        raw = base64.b64decode(text, validate=True)
    except (ValueError, TypeError) as e:
        raise ExportError(f"{where}: weights are not valid base64") from e
    words_per = _words_for_bits(window_bits)
    if len(raw) != n_filters * words_per * 4:
        raise ExportError(
            f"{where}: weight payload holds {len(raw)} bytes, expected "
            f"{n_filters * words_per * 4}"
        )
    words = np.frombuffer(raw, dtype="<u4").reshape(n_filters, words_per)
    j = np.arange(window_bits)
    bits = (words[:, j // WORD_BITS] >> (WORD_BITS - 1 - (j % WORD_BITS))) & 1
    return (2 * bits.astype(np.int64)) - 1


# --- threshold folding ------------------------------------------------------


def _passes(values: np.ndarray, threshold: int, direction: str) -> np.ndarray:
    return values >= threshold if direction == "geq" else values <= threshold


def _fold_by_sweep(
    accumulators: np.ndarray,
    domain: np.ndarray,
    mu: float,
    sigma: float,
    gamma: float,
    beta: float,
    where: str,
) -> tuple[int, str]:
    """Derive (threshold, direction) over ``domain`` (the comparison units),
    where ``accumulators`` holds the matching batchnorm inputs.

    The equivalence is checked across the entire domain before returning.
    """
    if gamma == 0.0:
        raise ExportError(
            f"{where}: batchnorm gamma is exactly zero, the sign carries no "
            f"information to fold"
        )
    mask = gamma * ((accumulators - mu) / sigma) + beta >= 0.0
    lo, hi = int(domain[0]), int(domain[-1])
    if not mask.any():
        threshold, direction = hi + 1, "geq"
    elif mask.all():
        threshold, direction = (lo, "geq") if gamma > 0 else (hi, "leq")
    elif gamma > 0:
        threshold, direction = int(domain[np.argmax(mask)]), "geq"
    else:
        threshold, direction = (
            int(domain[len(mask) - 1 - np.argmax(mask[::-1])]),
            "leq",
        )
    if not np.array_equal(_passes(domain, threshold, direction), mask):
        raise ExportError(
            f"{where}: batchnorm pass set is not a contiguous run, no single "
            f"comparison reproduces it"
        )
    if not I32_MIN <= threshold <= I32_MAX:
        raise ExportError(f"{where}: threshold {threshold} leaves int32")
    return threshold, direction


def fold_binary_channel(
    n: int, mu: float, sigma: float, gamma: float, beta: float,
    where: str = "channel",
) -> tuple[int, str]:
    """Fold batchnorm+sign over a binary dot of ``n`` bits.

    The comparison domain is the popcount P in [0, n]; the batchnorm sees
    the +-1 accumulator 2P - n.
    """
    domain = np.arange(n + 1, dtype=np.int64)
    return _fold_by_sweep(
        (2.0 * domain - n).astype(np.float64),
        domain, mu, sigma, gamma, beta, where,
    )


def fold_int8_channel(
    n: int, mu: float, sigma: float, gamma: float, beta: float,
    where: str = "channel",
) -> tuple[int, str]:
    """Fold batchnorm+sign over an int8 dot of ``n`` taps.

    The comparison domain is the raw accumulator in [-128n, 127n].
    """
    domain = np.arange(-128 * n, 127 * n + 1, dtype=np.int64)
    return _fold_by_sweep(
        domain.astype(np.float64), domain, mu, sigma, gamma, beta, where,
    )


# --- export -----------------------------------------------------------------


def _q16(value: float, what: str) -> int:
    q = int(round(value * Q16_ONE))
    if not I32_MIN <= q <= I32_MAX:
        raise ExportError(f"{what} {value!r} leaves the Q16.16 int32 range")
    return q


def _sign_pm1(arr: np.ndarray) -> np.ndarray:
    return np.where(arr >= 0, 1, -1).astype(np.int64)


@dataclass(frozen=True)
class ExportBundle:
    """An interchange document, its parity manifest, and a run report."""

    document: dict
    manifest: dict
    report: dict


def network_document(model, config) -> dict:
    """Binarize, fold, and pack one trained model into interchange JSON."""
    model.eval()
    layers = []
    conv_index = 0
    c_in = config.channels
    first_conv = True
    for si, stage in enumerate(config.stages):
        if isinstance(stage, PoolStage):
            layers.append({
                "type": "pool",
                "pool_k": stage.pool_k,
                "pool_s": stage.pool_s,
            })
            continue
        if isinstance(stage, FcStage):
            weights = _sign_pm1(model.fc_weight.detach().numpy())
            scale = model.score_scale.detach().numpy()
            bias = model.score_bias.detach().numpy()
            layers.append({
                "type": "fc",
                "n_classes": config.n_classes,
                "score_scale": [
                    _q16(float(s), f"class {i} score scale")
                    for i, s in enumerate(scale)
                ],
                "score_bias": [
                    _q16(float(b), f"class {i} score bias")
                    for i, b in enumerate(bias)
                ],
                "weights": filters_b64(weights[:, None, :]),
            })
            continue
        assert isinstance(stage, ConvStage)
        w = model.conv_weights[conv_index].detach().numpy()
        bn = model.batchnorms[conv_index]
        filters = _sign_pm1(w).transpose(0, 2, 1)  # (c_out, k, c_in)
        n = stage.k * c_in
        fold = fold_int8_channel if first_conv else fold_binary_channel
        mu = bn.running_mean.detach().numpy().astype(np.float64)
        sigma = np.sqrt(
            bn.running_var.detach().numpy().astype(np.float64) + bn.eps
        )
        gamma = bn.weight.detach().numpy().astype(np.float64)
        beta = bn.bias.detach().numpy().astype(np.float64)
        thresholds = []
        for m in range(stage.c_out):
            threshold, direction = fold(
                n, float(mu[m]), float(sigma[m]), float(gamma[m]),
                float(beta[m]), where=f"layer {si} channel {m}",
            )
            thresholds.append(
                {"threshold": threshold, "direction": direction}
            )
        layers.append({
            "type": "int8_conv" if first_conv else "binary_conv",
            "c_out": stage.c_out,
            "k": stage.k,
            "thresholds": thresholds,
            "weights": filters_b64(filters),
        })
        conv_index += 1
        c_in = stage.c_out
        first_conv = False
    return {
        "kind": "network",
        "version": INTERCHANGE_VERSION,
        "input": {
            "timesteps": config.timesteps,
            "channels": config.channels,
            "domain": "int8",
        },
        "layers": layers,
    }


# --- integer-semantics evaluation of an exported document -------------------


def integer_network_predictions(doc: dict, windows: np.ndarray) -> list[int]:
    """Evaluate interchange JSON on (n, T, C) int8 windows, integers only.

    This reads the document itself — decoded weights, written thresholds —
    rather than any training-side state, so the returned predictions
    certify the document.
    """
    inp = doc["input"]
    windows = np.asarray(windows, dtype=np.int64)
    if windows.ndim != 3 or windows.shape[1:] != (
        inp["timesteps"], inp["channels"]
    ):
        raise ExportError(
            f"windows shaped {windows.shape}, document expects "
            f"(n, {inp['timesteps']}, {inp['channels']})"
        )
    cur = windows  # (n, t, c) of int8 values, then +-1 after the first conv
    for li, layer in enumerate(doc["layers"]):
        kind = layer["type"]
        t, c = cur.shape[1], cur.shape[2]
        if kind == "pool":
            cur = _pool(cur, layer["pool_k"])
            continue
        if kind == "fc":
            weights = _filters_from_b64(
                layer["weights"], layer["n_classes"], t * c, f"layer {li}"
            )
            dots = cur.reshape(cur.shape[0], -1) @ weights.T
            scores = (
                np.asarray(layer["score_scale"], dtype=np.int64) * dots
                + np.asarray(layer["score_bias"], dtype=np.int64)
            )
            return [int(p) for p in np.argmax(scores, axis=1)]
        k, c_out = layer["k"], layer["c_out"]
        n = k * c
        filters = _filters_from_b64(
            layer["weights"], c_out, n, f"layer {li}"
        ).reshape(c_out, k, c)
        taps = np.lib.stride_tricks.sliding_window_view(cur, k, axis=1)
        acc = np.einsum("ntcj,mjc->ntm", taps, filters)
        compared = acc if kind == "int8_conv" else (acc + n) >> 1
        thresholds = np.asarray(
            [s["threshold"] for s in layer["thresholds"]], dtype=np.int64
        )
        geq = np.asarray(
            [s["direction"] == "geq" for s in layer["thresholds"]]
        )
        passes = np.where(
            geq[None, None, :],
            compared >= thresholds[None, None, :],
            compared <= thresholds[None, None, :],
        )
        cur = np.where(passes, 1, -1).astype(np.int64)
        if "fused_pool" in layer:
            cur = _pool(cur, layer["fused_pool"]["pool_k"])
    raise ExportError("document has no fully-connected head")


def _pool(cur: np.ndarray, pool_k: int) -> np.ndarray:
    t_out = cur.shape[1] // pool_k
    trimmed = cur[:, : t_out * pool_k, :]
    return trimmed.reshape(
        cur.shape[0], t_out, pool_k, cur.shape[2]
    ).max(axis=2)


# --- eval manifest ----------------------------------------------------------


def build_manifest(
    target: str, input_spec: dict, windows: np.ndarray, predictions: list[int]
) -> dict:
    windows = np.asarray(windows, dtype=np.int8)
    if len(predictions) != windows.shape[0]:
        raise ExportError(
            f"{len(predictions)} predictions for {windows.shape[0]} inputs"
        )
    return {
        "kind": "eval_manifest",
        "version": INTERCHANGE_VERSION,
        "target": target,
        "input": dict(input_spec),
        "n_inputs": int(windows.shape[0]),
        "inputs": base64.b64encode(windows.tobytes()).decode("ascii"),
        "predictions": [int(p) for p in predictions],
    }


def manifest_windows(manifest: dict) -> np.ndarray:
    """Decode a manifest's input payload back to (n, T, C) int8."""
    inp = manifest["input"]
    n, t, c = manifest["n_inputs"], inp["timesteps"], inp["channels"]
    raw = base64.b64decode(manifest["inputs"], validate=True)
    if len(raw) != n * t * c:
        raise ExportError(
            f"manifest payload holds {len(raw)} bytes, expected {n * t * c}"
        )
    return np.frombuffer(raw, dtype=np.int8).reshape(n, t, c)


def export_bnn(result) -> ExportBundle:
    """Export a training result: document, parity manifest, run report."""
    doc = network_document(result.model, result.config)
    windows = result.dataset.x_manifest
    predictions = integer_network_predictions(doc, windows)
    manifest = build_manifest(
        "network", doc["input"], windows, predictions
    )
    report = {
        "train_accuracy": result.train_accuracy,
        "val_accuracy": result.val_accuracy,
        "epochs_run": len(result.history),
    }
    return ExportBundle(doc, manifest, report)

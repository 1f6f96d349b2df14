"""Synthetic multi-channel activity windows for training and parity runs.

Each class gets its own per-channel drift sign pattern plus a phase-shifted
periodic component, with Gaussian noise on top; the drift dominates the
noise, so the classes are linearly separable and even a heavily quantized
model can reach high accuracy.  Samples are rounded and clipped to int8,
the domain the deployed models consume.

All three splits (train, validation, held-out manifest inputs) come from
independent child streams of the config seed, so resizing one split never
shifts the others.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DRIFT_AMPLITUDE = 40.0
WAVE_AMPLITUDE = 25.0
WAVE_PERIOD = 16.0
NOISE_SIGMA = 12.0


def make_windows(
    rng: np.random.Generator,
    n: int,
    timesteps: int,
    channels: int,
    n_classes: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` labelled windows, returned as int8 (n, T, C) plus labels."""
    labels = rng.integers(0, n_classes, size=n)
    t = np.arange(timesteps, dtype=np.float64)[None, :, None]
    c = np.arange(channels, dtype=np.float64)[None, None, :]
    y = labels[:, None, None].astype(np.float64)
    drift = DRIFT_AMPLITUDE * ((-1.0) ** (y + c))
    wave = WAVE_AMPLITUDE * np.sin(
        2.0 * np.pi * (t / WAVE_PERIOD + y / (2.0 * n_classes)) + c
    )
    noise = rng.normal(0.0, NOISE_SIGMA, size=(n, timesteps, channels))
    x = np.clip(np.rint(drift + wave + noise), -128, 127).astype(np.int8)
    return x, labels.astype(np.int64)


@dataclass(frozen=True)
class Dataset:
    """Train/validation splits plus unlabelled held-out manifest inputs."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_manifest: np.ndarray


def make_dataset(config) -> Dataset:
    """Materialize the three splits a :class:`TrainConfig` describes."""
    train_seq, val_seq, manifest_seq = np.random.SeedSequence(
        config.seed
    ).spawn(3)
    x_train, y_train = make_windows(
        np.random.default_rng(train_seq),
        config.n_train, config.timesteps, config.channels, config.n_classes,
    )
    x_val, y_val = make_windows(
        np.random.default_rng(val_seq),
        config.n_val, config.timesteps, config.channels, config.n_classes,
    )
    x_manifest, _ = make_windows(
        np.random.default_rng(manifest_seq),
        config.n_manifest, config.timesteps, config.channels,
        config.n_classes,
    )
    return Dataset(x_train, y_train, x_val, y_val, x_manifest)

"""Straight-through-estimator training for binarized 1D conv networks.

The forward pass is fully binarized: weights pass through a sign function
with an identity gradient (latent float weights are clamped to [-1, 1]
after every step), activations pass through sign with a hard-tanh gate
(gradients flow only where the pre-activation magnitude is at most 1).
Sign ties at exactly 0.0 go to +1 on both paths, matching the convention
the deployed integer engine uses, so a trained network and its export
agree bit for bit wherever batchnorm boundaries are not in play.

The first convolution consumes raw int8 sample values (as floats); every
later stage sees only +-1 activations.  The fully-connected head flattens
time-major — all channels of one timestep before the next timestep — which
is the order the deployment format packs bits in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import ConvStage, FcStage, PoolStage, TrainConfig
from .data import Dataset, make_dataset


class TrainingDivergedError(RuntimeError):
    """The loss left the realm of finite numbers."""


class _SignSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return torch.where(x >= 0, 1.0, -1.0).to(x.dtype)

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        return grad * (x.abs() <= 1.0).to(grad.dtype)


def _binarize_weight(w: torch.Tensor) -> torch.Tensor:
    wb = torch.where(w >= 0, 1.0, -1.0).to(w.dtype)
    return w + (wb - w).detach()


class BnnModel(nn.Module):
    """Torch realization of one parsed architecture."""

    def __init__(self, config: TrainConfig, generator: torch.Generator):
        super().__init__()
        self.config = config
        self.conv_weights = nn.ParameterList()
        self.batchnorms = nn.ModuleList()
        self.plan: list[tuple] = []
        c_in = config.channels
        for stage in config.stages:
            if isinstance(stage, ConvStage):
                w = torch.empty(stage.c_out, c_in, stage.k)
                w.uniform_(-0.5, 0.5, generator=generator)
                self.plan.append(("conv", len(self.conv_weights)))
                self.conv_weights.append(nn.Parameter(w))
                self.batchnorms.append(nn.BatchNorm1d(stage.c_out))
                c_in = stage.c_out
            elif isinstance(stage, PoolStage):
                self.plan.append(("pool", stage.pool_k))
            else:
                assert isinstance(stage, FcStage)
        wfc = torch.empty(config.n_classes, config.fc_in_bits)
        wfc.uniform_(-0.5, 0.5, generator=generator)
        self.fc_weight = nn.Parameter(wfc)
        self.score_scale = nn.Parameter(
            torch.full((config.n_classes,), 0.25)
        )
        self.score_bias = nn.Parameter(torch.zeros(config.n_classes))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x is (batch, channels, timesteps) of raw int8 values as floats."""
        h = x
        for kind, arg in self.plan:
            if kind == "conv":
                h = F.conv1d(h, _binarize_weight(self.conv_weights[arg]))
                h = _SignSTE.apply(self.batchnorms[arg](h))
            else:
                h = F.max_pool1d(h, arg, arg)
        h = h.transpose(1, 2).reshape(h.shape[0], -1)
        logits = F.linear(h, _binarize_weight(self.fc_weight))
        return logits * self.score_scale + self.score_bias

    def latent_weights(self):
        """Float parameters to clamp after each optimizer step."""
        yield from self.conv_weights
        yield self.fc_weight


@dataclass
class TrainResult:
    """A trained model plus the data and accuracy trace behind it."""

    model: BnnModel
    config: TrainConfig
    dataset: Dataset
    history: list[tuple[float, float]] = field(default_factory=list)

    @property
    def train_accuracy(self) -> float:
        return self.history[-1][0] if self.history else float("nan")

    @property
    def val_accuracy(self) -> float:
        return self.history[-1][1] if self.history else float("nan")


def _as_batch(x: np.ndarray) -> torch.Tensor:
    # (n, T, C) int8 -> (n, C, T) float32 of the raw sample values.
    return torch.tensor(x, dtype=torch.float32).transpose(1, 2)


@torch.no_grad()
def _accuracy(model: BnnModel, x: torch.Tensor, y: torch.Tensor) -> float:
    model.eval()
    return (model(x).argmax(dim=1) == y).float().mean().item()


def train_bnn(config: TrainConfig) -> TrainResult:
    """Train a binarized network on the config's synthetic dataset.

    Deterministic: the same config always yields the same parameters,
    batchnorm statistics, and accuracy history.  Training stops early once
    training accuracy reaches 1.0.  Raises
    :class:`TrainingDivergedError` if the loss goes non-finite.
    """
    generator = torch.Generator().manual_seed(config.seed)
    model = BnnModel(config, generator)
    dataset = make_dataset(config)
    x_train = _as_batch(dataset.x_train)
    y_train = torch.tensor(dataset.y_train)
    x_val = _as_batch(dataset.x_val)
    y_val = torch.tensor(dataset.y_val)

    result = TrainResult(model, config, dataset)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate
    )
    for epoch in range(config.epochs):
        model.train()
        order = torch.randperm(len(x_train), generator=generator)
        for start in range(0, len(x_train), config.batch_size):
            idx = order[start : start + config.batch_size]
            optimizer.zero_grad()
            loss = F.cross_entropy(model(x_train[idx]), y_train[idx])
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}"
                )
            loss.backward()
            optimizer.step()
            with torch.no_grad():
                for w in model.latent_weights():
                    w.clamp_(-1.0, 1.0)
        result.history.append(
            (_accuracy(model, x_train, y_train),
             _accuracy(model, x_val, y_val))
        )
        if result.history[-1][0] >= 1.0:
            break
    model.eval()
    return result

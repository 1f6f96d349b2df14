"""Straight-through training: convergence, determinism, sign conventions."""

import numpy as np
import pytest
import torch

from trainer import TrainConfig, TrainingDivergedError, train_bnn
from trainer.bnn import _SignSTE, _binarize_weight


class TestSignConventions:
    def test_activation_sign_ties_to_plus_one(self):
        x = torch.tensor([-1.5, -0.0, 0.0, 2.0])
        assert _SignSTE.apply(x).tolist() == [-1.0, 1.0, 1.0, 1.0]

    def test_activation_gradient_gate(self):
        x = torch.tensor([-2.0, -0.5, 0.5, 3.0], requires_grad=True)
        _SignSTE.apply(x).sum().backward()
        assert x.grad.tolist() == [0.0, 1.0, 1.0, 0.0]

    def test_weight_sign_ties_to_plus_one(self):
        w = torch.tensor([-0.3, 0.0, 0.7])
        assert _binarize_weight(w).tolist() == [-1.0, 1.0, 1.0]

    def test_weight_gradient_is_identity(self):
        w = torch.tensor([-0.3, 0.0, 0.7], requires_grad=True)
        (_binarize_weight(w) * torch.tensor([1.0, 2.0, 3.0])).sum().backward()
        assert w.grad.tolist() == [1.0, 2.0, 3.0]


class TestTraining:
    def test_reaches_accuracy_floor(self, trained):
        assert trained.train_accuracy >= 0.90
        assert len(trained.history) <= trained.config.epochs

    def test_validation_tracked(self, trained):
        assert all(0.0 <= v <= 1.0 for pair in trained.history for v in pair)
        assert trained.val_accuracy >= 0.90

    def test_early_stop_on_perfect_accuracy(self, trained):
        # The separable dataset converges well before the epoch budget.
        if trained.train_accuracy >= 1.0:
            assert len(trained.history) < trained.config.epochs

    def test_deterministic_parameters(self):
        config = TrainConfig(epochs=2, n_train=96, n_val=32, n_manifest=8)
        a, b = train_bnn(config), train_bnn(config)
        for pa, pb in zip(
            a.model.state_dict().values(), b.model.state_dict().values()
        ):
            assert torch.equal(pa, pb)

    def test_zero_epochs_leaves_init_state(self):
        result = train_bnn(
            TrainConfig(epochs=0, n_train=32, n_val=16, n_manifest=8)
        )
        assert result.history == []
        assert np.isnan(result.train_accuracy)
        bn = result.model.batchnorms[0]
        assert torch.equal(bn.running_mean, torch.zeros(2))
        assert torch.equal(bn.running_var, torch.ones(2))

    def test_divergence_is_reported(self):
        config = TrainConfig(
            learning_rate=1e37, epochs=3, n_train=128, n_val=32, n_manifest=8
        )
        with pytest.raises(TrainingDivergedError, match="non-finite"):
            train_bnn(config)

    def test_forward_shape(self, trained):
        x = torch.zeros(5, trained.config.channels, trained.config.timesteps)
        with torch.no_grad():
            assert trained.model(x).shape == (5, trained.config.n_classes)

    def test_latent_weights_stay_clamped(self, trained):
        for w in trained.model.latent_weights():
            assert w.abs().max().item() <= 1.0

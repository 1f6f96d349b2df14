"""Session-scoped training runs shared across test modules.

Training is deterministic, so one fast run can serve every module that
needs a trained model or an export bundle.
"""

import pytest

from trainer import TrainConfig, export_bnn, export_rf, train_bnn, train_rf

# Small but honest: enough data and epochs for the separable dataset to
# converge, small enough to keep the suite quick.
FAST = dict(epochs=8, n_train=192, n_val=96, n_manifest=40)


@pytest.fixture(scope="session")
def fast_config():
    return TrainConfig(**FAST)


@pytest.fixture(scope="session")
def trained(fast_config):
    return train_bnn(fast_config)


@pytest.fixture(scope="session")
def bundle(trained):
    return export_bnn(trained)


@pytest.fixture(scope="session")
def rf_config():
    return TrainConfig(n_trees=8, rf_max_depth=6, **FAST)


@pytest.fixture(scope="session")
def rf_trained(rf_config):
    return train_rf(rf_config)


@pytest.fixture(scope="session")
def rf_bundle(rf_trained):
    return export_rf(rf_trained)

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fairtrack.data import Federation, SyntheticSpec, TabularDataset, generate_synthetic
from fairtrack.federation import FedRunConfig
from fairtrack.kernels import GaussianKernel

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def gaussian() -> GaussianKernel:
    return GaussianKernel(bandwidth=1.0)


@pytest.fixture
def toy_dataset() -> TabularDataset:
    rng = np.random.default_rng(7)
    features = rng.standard_normal((24, 3))
    labels = np.tile([0, 1], 12)
    protected = np.repeat([0, 1, 0, 1], 6)
    return TabularDataset(features=features, labels=labels, protected=protected)


@pytest.fixture
def small_federation() -> Federation:
    shards = generate_synthetic(SyntheticSpec(n_clients=3, samples_per_client=40, dim=3, rng_seed=11))
    return Federation.from_shards(shards, test_fraction=0.25, seed=11)


@pytest.fixture
def fast_config() -> FedRunConfig:
    return FedRunConfig(
        rounds=3,
        local_epochs=4,
        local_step=0.1,
        batch_size=10,
        set_size=20,
        lam=1.0,
        step_decay=1.0,
        seed=5,
    )

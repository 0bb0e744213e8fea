import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from hvfvc.backbone import ModelConfig

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TINY = ModelConfig(feature_channels=16, latent_channels=24, hyper_channels=8, motion_channels=16,
                   motion_latent_channels=8, context_channels=8, lsh_bucket_size=16, disc_channels=8)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)

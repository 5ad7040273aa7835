import numpy as np
import pytest
import torch

from fairsynth.data import BiasInjectionSpec, MixtureSpec, synthesize_biased

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def toy():
    spec = BiasInjectionSpec(n_rows=2000, correlation_strength=0.6, minority_fraction=0.2,
                             proxy_agreement=0.8, label_missing_fraction=0.3, seed=3)
    return synthesize_biased(spec)


@pytest.fixture(scope="session")
def toy_full_labels():
    spec = BiasInjectionSpec(n_rows=2000, correlation_strength=0.6, minority_fraction=0.2, seed=4)
    return synthesize_biased(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_bundle(toy):
    from fairsynth.triple_gan import TrainingConfig, init_models, train_stage1
    cfg = TrainingConfig(batch_size=256, learning_rate=1e-3, epochs=2, noise_dim=8, seed=2)
    return train_stage1(toy, init_models(toy, None, cfg), cfg)

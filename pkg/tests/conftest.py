import numpy as np
import pytest

from protofusion import GanConfig, SynthConfig, generate_synthetic
from protofusion.gan import train_tcgan


TINY_SYNTH = SynthConfig(n_base_classes=4, n_novel_classes=3, samples_per_class=8,
                         texts_per_image=3, visual_dim=4, text_dim=6, seed=1)


@pytest.fixture()
def tiny_dataset():
    # fresh instance per test: the text_reads counter must start at zero
    return generate_synthetic(TINY_SYNTH)


@pytest.fixture(scope="session")
def shared_tiny_dataset():
    return generate_synthetic(TINY_SYNTH)


@pytest.fixture(scope="session")
def tiny_gan_state(shared_tiny_dataset):
    config = GanConfig(text_dim=6, visual_dim=4, iterations=30, batch_size=8, seed=5)
    return train_tcgan(shared_tiny_dataset, config)


@pytest.fixture(scope="session")
def default_dataset():
    return generate_synthetic(SynthConfig(seed=42))


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)

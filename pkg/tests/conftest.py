import numpy as np
import pytest
import torch

from glyphclust.synth import PerturbConfig, generate_corpus
from glyphclust.training import TrainConfig, train

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_corpus():
    """18 perturbed examples of one class (3 casts x 6), with truth."""
    images, truths = generate_corpus(["F"], PerturbConfig(per_cast=6), seed=3)
    return images, truths


@pytest.fixture(scope="session")
def tiny_stack(tiny_corpus):
    images, _ = tiny_corpus
    return torch.as_tensor(
        np.stack([im.pixels for im in images]), dtype=torch.float64
    )


@pytest.fixture(scope="session")
def trained_full(tiny_stack):
    """A briefly trained editor-variant model for structural tests."""
    cfg = TrainConfig(epochs=4, batch_size=9, kl_warmup_epochs=2, seed=0)
    return train(tiny_stack, "full", 2, config=cfg)

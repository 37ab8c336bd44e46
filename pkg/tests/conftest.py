"""Shared fixtures: tiny task specs and configs sized for fast tests."""

import numpy as np
import pytest

from spglab.tasks import TaskSpec


@pytest.fixture
def blobs_spec():
    return TaskSpec(kind="classification", seed=11, train_samples=240,
                    val_samples=80, test_samples=120, noise=1.0)


@pytest.fixture
def seg_spec():
    return TaskSpec(kind="segmentation", seed=11, train_samples=12,
                    val_samples=4, test_samples=6, noise=0.3,
                    height=10, width=10, shapes_per_image=2)


@pytest.fixture
def lm_spec():
    return TaskSpec(kind="language-modeling", seed=11, train_samples=80,
                    val_samples=30, test_samples=40, noise=0.1,
                    context_len=6, vocab=6)


@pytest.fixture
def tiny_config_text():
    return """
[task]
kind = classification
seed = 11
train_samples = 240
val_samples = 80
test_samples = 120
noise = 1.0

[net]
hidden = 16

[train]
seed = 11
epochs = 3
lr = 0.001
batch_size = 64
"""


def assert_allclose(a, b, tol=1e-12):
    np.testing.assert_allclose(a, b, rtol=tol, atol=tol)

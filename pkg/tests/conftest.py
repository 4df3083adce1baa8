"""Shared builders for small test models and the committed fixtures."""

import pathlib

import numpy as np
import pytest

from ibdpsc.modelio import (
    BatchNorm,
    Conv,
    GlobalAvgPool,
    Linear,
    ModelGraph,
    ReLU,
    load_dataset,
    load_model,
)
from ibdpsc.tensor import BnParams

FIXTURES = pathlib.Path(__file__).resolve().parent / "fixtures"


def identity_bn(channels, name, gamma=1.0, beta=0.0):
    return BatchNorm(
        BnParams(
            np.full(channels, gamma, dtype=np.float32),
            np.full(channels, beta, dtype=np.float32),
            np.zeros(channels, dtype=np.float32),
            np.ones(channels, dtype=np.float32),
            epsilon=1e-5,
        ),
        name=name,
    )


def random_bn(channels, name, rng):
    return BatchNorm(
        BnParams(
            (rng.random(channels) * 1.5 + 0.25).astype(np.float32),
            (rng.standard_normal(channels) * 0.2).astype(np.float32),
            (rng.standard_normal(channels) * 0.2).astype(np.float32),
            (rng.random(channels) * 0.8 + 0.2).astype(np.float32),
            epsilon=1e-5,
        ),
        name=name,
    )


def random_small_model(rng, bn_layers=2, classes=3, channels=4, image=6):
    """Conv-BN-ReLU stack ending in GAP + linear; weights scaled for sane logits."""
    layers = []
    cin = 3
    for i in range(bn_layers):
        w = (rng.standard_normal((channels, cin, 3, 3)) * 0.3).astype(np.float32)
        b = (rng.standard_normal(channels) * 0.05).astype(np.float32)
        layers += [Conv(w, b, 1, 1, name=f"conv{i}"), random_bn(channels, f"bn{i}", rng), ReLU()]
        cin = channels
    head_w = (rng.standard_normal((classes, channels)) * 0.8).astype(np.float32)
    head_b = (rng.standard_normal(classes) * 0.1).astype(np.float32)
    layers += [GlobalAvgPool(), Linear(head_w, head_b, name="head")]
    return ModelGraph(layers=layers, class_count=classes, input_shape=(3, image, image))


@pytest.fixture
def small_model():
    return random_small_model(np.random.default_rng(11))


@pytest.fixture
def small_batch():
    rng = np.random.default_rng(12)
    return rng.random((4, 3, 6, 6), dtype=np.float32)


@pytest.fixture(scope="session")
def backdoored_model():
    return load_model(FIXTURES / "backdoored.ibdm")


@pytest.fixture(scope="session")
def benign_model():
    return load_model(FIXTURES / "benign.ibdm")


@pytest.fixture(scope="session")
def white_trigger_model():
    return load_model(FIXTURES / "white_trigger.ibdm")


@pytest.fixture(scope="session")
def reference_ds():
    return load_dataset(FIXTURES / "reference.ibds")


@pytest.fixture(scope="session")
def eval_mix_ds():
    return load_dataset(FIXTURES / "eval_mix.ibds")


@pytest.fixture(scope="session")
def suspect_train_ds():
    return load_dataset(FIXTURES / "suspect_train.ibds")

"""Shared fixtures.

The expensive fixtures (trained classifiers) are session-scoped and sized to
keep the whole unit suite fast; the acceptance suite builds its own larger
models with pinned configurations.
"""

import numpy as np
import pytest

from rhp import (
    RegionSplitSpec,
    build_partition,
    build_toy_cnn,
    generate_synthetic_dataset,
    train_classifier,
)


@pytest.fixture(scope="session")
def small_eval_set():
    return generate_synthetic_dataset(10, 10, 32, seed=303, split_tag="eval")


@pytest.fixture(scope="session")
def small_train_set():
    return generate_synthetic_dataset(10, 20, 32, seed=101,
                                      split_tag="train_classifier")


@pytest.fixture(scope="session")
def small_module_set():
    return generate_synthetic_dataset(10, 10, 32, seed=202,
                                      split_tag="train_module")


@pytest.fixture(scope="session")
def small_classifier(small_train_set):
    model = build_toy_cnn(10, (3, 32, 32), seed=0, model_id="unit_nat")
    return train_classifier(model, small_train_set, epochs=3, seed=0)


@pytest.fixture
def vertical8():
    spec = RegionSplitSpec("vertical", 8)
    return spec, build_partition(spec, 32, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(0)

import time

import numpy as np
import pytest

from hpac import kernels
from hpac.model import ModelConfig, init_model
from hpac.pcap import split_dataset
from hpac.segmenter import segment_all
from hpac.toy import make_toy_corpus
from hpac.trainer import TrainConfig, train

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line[1])


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    prev = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(k=6, d=8, heads=2, kernel=3, m_max=4, seed=3)


@pytest.fixture
def tiny_model(tiny_config):
    return init_model(tiny_config)


TOY_MODEL_CONFIG = ModelConfig(k=20, d=32, heads=4, kernel=3, m_max=64, seed=0)
TOY_TRAIN_CONFIG = TrainConfig(epochs=10, steps_per_epoch=50, batch_size=40, lr=1e-3,
                               focal_gamma=2.0, focal_alpha=0.25, seed=0)


@pytest.fixture(scope="session")
def toy_packets():
    return make_toy_corpus(n=2000, malicious_fraction=0.3, seed=0)


@pytest.fixture(scope="session")
def toy_splits(toy_packets):
    split = split_dataset(toy_packets, (0.6, 0.2, 0.2), seed=0)
    k = TOY_MODEL_CONFIG.k
    return segment_all(split.train, k), segment_all(split.validation, k), segment_all(split.test, k)


@pytest.fixture(scope="session")
def toy_trained(toy_splits):
    """Model trained on the toy corpus with the scaled-down schedule, plus timing."""
    tr, va, _ = toy_splits
    start = time.perf_counter()
    model, history = train(init_model(TOY_MODEL_CONFIG), tr, va, TOY_TRAIN_CONFIG)
    return model, history, time.perf_counter() - start

import numpy as np
import pytest
import torch

from app.core.config import EDMConfig, ModelConfig
from app.services.graphs import Graph


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo or training runs (deselect with -m 'not slow')")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def generator():
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def path3():
    return Graph.from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def cycle4():
    return Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])


@pytest.fixture
def path4():
    return Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])


@pytest.fixture
def tiny_model_config():
    return ModelConfig(
        patch_size=1,
        window_size=2,
        token_dim=8,
        heads=[1, 2],
        down_layers=[1, 1],
        up_layers=[1, 1],
        bottleneck_layers=1,
    )


@pytest.fixture
def edm_config():
    return EDMConfig()


def random_graph(n, rng, p=0.5):
    upper = np.triu((rng.random((n, n)) < p).astype(np.int8), k=1)
    return Graph(upper + upper.T)

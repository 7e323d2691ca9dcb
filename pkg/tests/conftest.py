import numpy as np
import pytest

from pseudopair.providers import SyntheticEncoder
from pseudopair.synthetic import build_cluster_corpus


@pytest.fixture
def encoder64():
    return SyntheticEncoder(dim=64, seed=7)


@pytest.fixture
def small_corpus():
    # 20 images, 4 clusters, joint space shared with the seed-7 encoder
    return build_cluster_corpus(20, 4, 64, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def unit_rows(n: int, d: int, seed: int) -> np.ndarray:
    g = np.random.default_rng(seed)
    rows = g.standard_normal((n, d))
    return (rows / np.linalg.norm(rows, axis=1, keepdims=True)).astype(np.float32)

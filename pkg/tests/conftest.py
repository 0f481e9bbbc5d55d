import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_corpus():
    """A dozen rendered scenes shared across test modules."""
    from anchorvid.corpus import gen_corpus

    return gen_corpus(12, seed=1234)


@pytest.fixture(scope="session")
def tiny_model():
    """A deliberately small transformer for contract tests."""
    from anchorvid.dit import DiTConfig, init_dit_params

    cfg = DiTConfig(dim=32, heads=2, blocks=2, grid=(3, 4, 4),
                    rope_sub_dims=(4, 6, 6), vocab=8, sample_steps=4)
    params = init_dit_params(cfg, seed=0)
    return cfg, params


@pytest.fixture()
def rng():
    return np.random.default_rng(99)

import numpy as np
import pytest

from seqx.model import ModelDims, ModelParams, Vocab, init_params


@pytest.fixture
def tiny_vocab():
    return Vocab(["a", "b", "c"])


@pytest.fixture
def tiny_dims(tiny_vocab):
    return ModelDims(feature_dim=3, emb_dim=5, hidden_dim=8, vocab_size=tiny_vocab.size)


@pytest.fixture
def tiny_params(tiny_dims):
    return init_params(tiny_dims, seed=12345)


@pytest.fixture
def tiny_features():
    return np.random.default_rng(2024).normal(size=3)


def perturb(params: ModelParams, seed: int, scale: float = 0.6) -> ModelParams:
    """Shift parameters away from init so softmaxes are far from uniform."""
    rng = np.random.default_rng(seed)
    out = params.copy()
    for _, array in out.arrays():
        array += rng.normal(scale=scale, size=array.shape)
    return out


def random_caption(rng, vocab: Vocab, max_len: int) -> tuple:
    length = int(rng.integers(1, max_len + 1))
    return tuple(int(t) for t in rng.choice(list(vocab.content_ids), size=length))

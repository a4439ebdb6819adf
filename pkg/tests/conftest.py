import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from coral import model as M
from coral import tokenizer as tok


@pytest.fixture
def micro_config():
    """Smallest config that exercises every code path; matches the 1080-param
    example used by count_params and the health endpoint."""
    return M.ModelConfig(
        n_layers=1, n_heads=2, d_model=8, d_ff=32, vocab_size=16, max_seq_len=8,
        dropout_rate=0.0,
    )


@pytest.fixture
def micro_weights(micro_config):
    return M.init(micro_config, seed=7)


@pytest.fixture(scope="session")
def tiny_vocab():
    """A small trained vocabulary shared by data/generation tests."""
    corpus = [
        "hello there", "how are you", "i am fine", "that sounds hard",
        "tell me more", "i feel sad today", "i feel happy today",
        "thank you for listening", "it helps to talk",
    ] * 4
    return tok.train_bpe(corpus, 280)


def rand_tensor(rng: np.random.Generator, shape, lo=-2.0, hi=2.0):
    from coral.tensor import Tensor

    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)

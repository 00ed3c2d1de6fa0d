import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from typedq.corpus import CorpusPair, Vocabulary, WordType, load_lexicons, synth_corpus
from typedq.model import ModelConfig, ModelParams


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")
    parser.addoption("--record-reference", action="store_true", default=False,
                     help="copy the reference run's reports and loss curves into tests/reference_run")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training checks (need --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def lexicons():
    return load_lexicons()


@pytest.fixture(scope="session")
def small_corpus():
    return synth_corpus(seed=3, n=60)


@pytest.fixture
def tiny_vocab():
    # 10 entries: 4 reserved plus 6 words
    return Vocabulary(["<pad>", "<s>", "</s>", "<unk>", "what", "?", "sushi", "fish", "i", "eat"])


@pytest.fixture
def tiny_pair():
    I, T, O = WordType.INTERROGATIVE, WordType.TOPIC, WordType.ORDINARY
    return CorpusPair(("i", "eat", "sushi"), ("what", "fish", "?"), (I, T, I, O))


def make_params(variant: str, vocab_size: int = 10, seed: int = 0, d_emb: int = 3, d_hidden: int = 4,
                n_layers: int = 1, scale: float = 0.5) -> ModelParams:
    config = ModelConfig(variant=variant, vocab_size=vocab_size, d_emb=d_emb, d_hidden=d_hidden, n_layers=n_layers)
    return ModelParams.init(config, np.random.default_rng(seed), scale=scale)

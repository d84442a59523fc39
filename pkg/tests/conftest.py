import pytest

from desklm.fixtures import mixed_corpus
from desklm.tokenizer import TokenizerConfig, train_unigram


@pytest.fixture(scope="session")
def desk_tokenizer():
    """A small trained tokenizer shared by the suite (trained once)."""
    corpus = mixed_corpus(40, seed=777)
    cfg = TokenizerConfig(target_vocab_size=500, seed_multiplier=3.0,
                          em_iters_per_round=2, seed=777)
    return train_unigram(corpus, cfg)


@pytest.fixture(scope="session")
def desk_corpus():
    return mixed_corpus(40, seed=777)

"""Shared tiny-scale fixtures: a small corpus and a model sized to match."""

import pytest

from semstt import corpus as cp, model as md

TINY_CORPUS = cp.CorpusConfig(vocab_size=4, n_train=10, n_dev=3, n_test=3,
                              min_tokens=2, max_tokens=4, min_span=6, max_span=9)
TINY_MODEL = md.ModelConfig(conv_channels=(2,), rnn_hidden=3, rnn_schedule=(2,),
                            attn_dim=4, attn_kernel=3, attn_filters=2, state_dim=6,
                            embed_dim=3, vocab_size=7, k=2, max_decode_len=8)


@pytest.fixture(scope="session")
def tiny_corpus():
    return cp.gen_corpus(TINY_CORPUS, seed=13)


@pytest.fixture()
def tiny_model():
    return md.Model(TINY_MODEL, seed=3)

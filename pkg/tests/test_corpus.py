"""Synthetic corpus tests: determinism, alignment, batching, persistence."""

import numpy as np
import pytest

from semstt import corpus as cp
from semstt.errors import ConfigError, DataFormatError, ShapeError

SMALL = cp.CorpusConfig(vocab_size=12, n_train=6, n_dev=2, n_test=2,
                        min_tokens=2, max_tokens=5, min_span=6, max_span=10)


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------

def test_vocabulary_round_trip_and_unk():
    v = cp.Vocabulary.default(8)
    assert v.size == 11
    for word in v.words:
        assert v.decode(v.encode(word)) == word
    assert v.encode("not-a-word") == cp.UNK_ID
    assert v.decode(cp.PAD_ID) == "<pad>"
    assert v.decode(cp.UNK_ID) == "<unk>"
    assert v.decode(cp.EOS_ID) == "<eos>"
    with pytest.raises(ShapeError):
        v.decode(v.size)


def test_vocabulary_rejects_duplicates_and_empty():
    with pytest.raises(ConfigError):
        cp.Vocabulary(("a", "a"))
    with pytest.raises(ConfigError):
        cp.Vocabulary(())


def test_config_validation():
    with pytest.raises(ConfigError):
        cp.CorpusConfig(vocab_size=0)
    with pytest.raises(ConfigError):
        cp.CorpusConfig(min_tokens=5, max_tokens=3)
    with pytest.raises(ConfigError):
        cp.CorpusConfig(min_span=0)
    with pytest.raises(ConfigError):
        cp.CorpusConfig(unk_rate=1.0)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def test_same_config_and_seed_regenerates_identically():
    a = cp.gen_corpus(SMALL, seed=5)
    b = cp.gen_corpus(SMALL, seed=5)
    assert a == b
    c = cp.gen_corpus(SMALL, seed=6)
    assert a != c


def test_fixed_spans_give_exact_frame_counts():
    config = cp.CorpusConfig(vocab_size=10, n_train=4, n_dev=1, n_test=1,
                             min_tokens=5, max_tokens=5, min_span=20, max_span=20)
    corpus = cp.gen_corpus(config, seed=1)
    for s in corpus.sentences:
        assert s.tokens.size == 5
        assert s.n_frames == 100


def test_alignment_partitions_every_frame():
    corpus = cp.gen_corpus(SMALL, seed=2)
    for s in corpus.sentences:
        owner = s.frame_owner()
        assert owner.shape == (s.n_frames,)
        np.testing.assert_array_equal(np.bincount(owner, minlength=s.tokens.size),
                                      s.span_lengths)
        starts = s.span_starts()
        assert starts[0] == 0
        np.testing.assert_array_equal(np.diff(starts), s.span_lengths[:-1])


def test_zero_jitter_repeats_prototypes_inside_spans():
    config = cp.CorpusConfig(vocab_size=6, n_train=8, n_dev=1, n_test=1,
                             min_tokens=3, max_tokens=6, min_span=8, max_span=12,
                             jitter=0.0, unk_rate=0.0)
    corpus = cp.gen_corpus(config, seed=3)
    protos = cp.token_prototypes(config, seed=3)
    fade = cp._FADE
    for s in corpus.sentences:
        for tok, start, length in zip(s.tokens, s.span_starts(), s.span_lengths):
            interior = s.spectrum[start + fade:start + length - fade, :, 0]
            np.testing.assert_array_equal(interior,
                                          np.tile(protos[tok], (interior.shape[0], 1)))


def test_splits_have_requested_sizes_and_are_disjoint():
    corpus = cp.gen_corpus(SMALL, seed=4)
    assert len(corpus.split("train")) == SMALL.n_train
    assert len(corpus.split("dev")) == SMALL.n_dev
    assert len(corpus.split("test")) == SMALL.n_test
    assert len(corpus.sentences) == SMALL.n_train + SMALL.n_dev + SMALL.n_test
    with pytest.raises(ConfigError):
        corpus.split("validation")


def test_token_marginal_is_roughly_uniform():
    config = cp.CorpusConfig(vocab_size=16, n_train=400, n_dev=1, n_test=1,
                             min_tokens=4, max_tokens=8, min_span=1, max_span=1,
                             unk_rate=0.0)
    corpus = cp.gen_corpus(config, seed=7)
    counts = np.zeros(16)
    for s in corpus.sentences:
        for t in s.tokens:
            counts[t - cp.N_SPECIALS] += 1
    expected = counts.sum() / 16
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert chi2 / 15 < 1.8  # 15 degrees of freedom, generous bound


def test_unk_injection_iff_configured():
    clean = cp.gen_corpus(cp.CorpusConfig(vocab_size=8, n_train=40, n_dev=1, n_test=1,
                                          min_span=2, max_span=3, unk_rate=0.0), seed=8)
    assert all(cp.UNK_ID not in s.tokens for s in clean.sentences)
    noisy = cp.gen_corpus(cp.CorpusConfig(vocab_size=8, n_train=40, n_dev=1, n_test=1,
                                          min_span=2, max_span=3, unk_rate=0.2), seed=8)
    assert any(cp.UNK_ID in s.tokens for s in noisy.sentences)
    # even under heavy injection every sentence keeps a real word
    heavy = cp.gen_corpus(cp.CorpusConfig(vocab_size=8, n_train=60, n_dev=1, n_test=1,
                                          min_span=2, max_span=3, unk_rate=0.9), seed=9)
    assert all(np.any(s.tokens != cp.UNK_ID) for s in heavy.sentences)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def make_sentence(tokens, span, split="train"):
    tokens = np.asarray(tokens)
    spans = np.full(tokens.size, span)
    fb = np.ones((int(spans.sum()), cp.N_FILTERS))
    return cp.Sentence(tokens, spans, cp.spectrum_from_fbank(fb), split)


def test_batch_pad_contract_example():
    batch, targets, mask = cp.batch_pad([make_sentence([5, 7], span=4)], max_target_len=5)
    np.testing.assert_array_equal(targets[0], [5, 7, cp.EOS_ID, cp.PAD_ID, cp.PAD_ID])
    np.testing.assert_array_equal(mask[0], [1, 1, 1, 0, 0])
    assert batch.data.shape[0] == 1
    np.testing.assert_array_equal(batch.lengths, [8])


def test_batch_pad_pads_spectra_to_longest():
    s3 = make_sentence([3, 4, 5], span=4)
    s5 = make_sentence([3, 4, 5, 6, 7], span=4)
    batch, targets, mask = cp.batch_pad([s3, s5], max_target_len=6)
    np.testing.assert_array_equal(batch.lengths, [12, 20])
    assert batch.data.shape[1] == 20
    np.testing.assert_array_equal(batch.data[0, 12:], 0.0)
    np.testing.assert_array_equal(targets[1], [3, 4, 5, 6, 7, cp.EOS_ID])
    np.testing.assert_array_equal(mask.sum(axis=1), [4, 6])


def test_batch_pad_rejects_overflow_and_empty():
    with pytest.raises(ShapeError):
        cp.batch_pad([make_sentence([3, 4, 5], span=2)], max_target_len=3)
    with pytest.raises(ShapeError):
        cp.batch_pad([], max_target_len=5)


def test_sentence_invariants():
    with pytest.raises(ShapeError):
        make_sentence([3, cp.PAD_ID], span=2)
    with pytest.raises(ShapeError):
        make_sentence([3, cp.EOS_ID], span=2)
    with pytest.raises(ShapeError):
        cp.Sentence(np.array([3]), np.array([2]),
                    np.zeros((3, cp.N_FILTERS, 3)), "train")  # frames != spans
    with pytest.raises(ShapeError):
        make_sentence([3], span=2, split="holdout")


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    corpus = cp.gen_corpus(SMALL, seed=11)
    path = tmp_path / "corpus.bin"
    cp.save_corpus(corpus, path)
    loaded = cp.load_corpus(path)
    assert loaded == corpus
    # regeneration from the stored seed and config reproduces the data
    assert cp.gen_corpus(loaded.config, loaded.seed) == loaded


def test_load_rejects_corruption(tmp_path):
    corpus = cp.gen_corpus(SMALL, seed=12)
    path = tmp_path / "corpus.bin"
    cp.save_corpus(corpus, path)
    blob = path.read_bytes()

    bad = tmp_path / "bad_magic.bin"
    bad.write_bytes(b"NOTMAGIC" + blob[8:])
    with pytest.raises(DataFormatError):
        cp.load_corpus(bad)

    short = tmp_path / "short.bin"
    short.write_bytes(blob[:-17])
    with pytest.raises(DataFormatError):
        cp.load_corpus(short)

    long_ = tmp_path / "long.bin"
    long_.write_bytes(blob + b"\x01\x02")
    with pytest.raises(DataFormatError):
        cp.load_corpus(long_)

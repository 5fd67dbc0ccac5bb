import hashlib
import os

import numpy as np
import pytest

import semstt.autodiff as ad
from conftest import TINY_CORPUS, TINY_MODEL
from semstt import corpus as cp, model as md, training as tr
from semstt.errors import ConfigError, ShapeError


def param_hash(params: dict) -> str:
    h = hashlib.blake2b(digest_size=16)
    for name in sorted(params):
        h.update(name.encode())
        h.update(params[name].data.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def test_cross_entropy_of_uniform_logits_is_log_vocab():
    v = 67
    logits = ad.constant(np.zeros((2, 3, v)))
    targets = np.array([[3, 4, 2], [5, 2, 0]])
    mask = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
    loss = tr.masked_cross_entropy(logits, targets, mask)
    np.testing.assert_allclose(float(loss.data), np.log(v), rtol=1e-12)


def test_untrained_model_starts_near_log_vocab(tiny_corpus, tiny_model):
    batch, targets, mask = cp.batch_pad(tiny_corpus.split("dev"), 5)
    with ad.no_grad():
        aligned = tiny_model.decode_sequence(tiny_model.encode(batch), targets=targets)
        loss = tr.masked_cross_entropy(aligned.logits, targets, mask)
    # fresh parameters produce near-uniform distributions over the vocabulary
    assert abs(float(loss.data) - np.log(TINY_MODEL.vocab_size)) < 0.05


def test_cross_entropy_rejects_empty_mask():
    with pytest.raises(ShapeError, match="mask"):
        tr.masked_cross_entropy(ad.constant(np.zeros((1, 2, 4))),
                                np.zeros((1, 2), dtype=int), np.zeros((1, 2)))


def test_cross_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    base = rng.normal(size=(2, 3, 5))
    targets = rng.integers(0, 5, size=(2, 3))
    mask = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]])

    logits = ad.Tensor(base.copy(), requires_grad=True)
    ad.backward(tr.masked_cross_entropy(logits, targets, mask))
    h, idx = 1e-6, (1, 2, 3)
    up, dn = base.copy(), base.copy()
    up[idx] += h
    dn[idx] -= h
    with ad.no_grad():
        fu = float(tr.masked_cross_entropy(ad.constant(up), targets, mask).data)
        fd = float(tr.masked_cross_entropy(ad.constant(dn), targets, mask).data)
    np.testing.assert_allclose(logits.grad[idx], (fu - fd) / (2 * h), rtol=1e-6, atol=1e-10)


# ---------------------------------------------------------------------------
# stage 1
# ---------------------------------------------------------------------------


def test_one_epoch_writes_checkpoint_and_one_log_row(tiny_corpus, tiny_model, tmp_path):
    result = tr.train_stage1(tiny_model, tiny_corpus, epochs=1, batch_size=4,
                             seed=5, out_dir=tmp_path)
    assert os.path.exists(result.checkpoint)
    assert len(result.rows) == 1 and np.isfinite(result.rows[0].loss)
    lines = (tmp_path / "train1_log.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,dev_wer" and len(lines) == 2


def test_stage1_only_touches_transmitter_parameters(tiny_corpus, tiny_model, tmp_path):
    before = param_hash(tiny_model.channel_params())
    tr.train_stage1(tiny_model, tiny_corpus, epochs=1, batch_size=4, seed=5, out_dir=tmp_path)
    assert param_hash(tiny_model.channel_params()) == before


def test_stage1_is_deterministic(tiny_corpus, tmp_path):
    outs = []
    for run in range(2):
        m = md.Model(TINY_MODEL, seed=3)
        out = tmp_path / f"run{run}"
        tr.train_stage1(m, tiny_corpus, epochs=2, batch_size=4, seed=5, out_dir=out)
        outs.append(((out / "stage1.ckpt").read_bytes(), (out / "train1_log.csv").read_bytes()))
    assert outs[0] == outs[1]


def test_optimizer_constants_change_the_training_path(tiny_corpus, tmp_path):
    ckpts = []
    for name, kwargs in (("a", {}), ("b", {"eps": 1e-2}), ("c", {"rho": 0.5})):
        m = md.Model(TINY_MODEL, seed=3)
        out = tmp_path / name
        tr.train_stage1(m, tiny_corpus, epochs=1, batch_size=4, seed=5,
                        out_dir=out, **kwargs)
        ckpts.append((out / "stage1.ckpt").read_bytes())
    assert ckpts[0] != ckpts[1] and ckpts[0] != ckpts[2]


def test_vocab_mismatch_is_rejected(tiny_corpus, tmp_path):
    wrong = md.Model(md.ModelConfig(conv_channels=(2,), rnn_hidden=2, rnn_schedule=(2,),
                                    attn_dim=3, attn_kernel=3, attn_filters=2, state_dim=4,
                                    embed_dim=3, vocab_size=9, k=2, max_decode_len=6))
    with pytest.raises(ConfigError, match="vocabulary"):
        tr.train_stage1(wrong, tiny_corpus, 1, 4, 5, tmp_path)


# ---------------------------------------------------------------------------
# stage 2
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def stage1_tiny(tmp_path_factory):
    corpus = cp.gen_corpus(TINY_CORPUS, seed=13)
    model = md.Model(TINY_MODEL, seed=3)
    out = tmp_path_factory.mktemp("stage1")
    tr.train_stage1(model, corpus, epochs=2, batch_size=4, seed=5, out_dir=out)
    return corpus, model


def test_stage2_freezes_the_transmitter_exactly(stage1_tiny, tmp_path):
    corpus, model = stage1_tiny
    before = param_hash(model.transmitter_params())
    tr.train_stage2(model, corpus, epochs=2, batch_size=4, kind="awgn",
                    snr_lo=0.0, snr_hi=18.0, dev_snr=9.0, seed=5, out_dir=tmp_path)
    assert param_hash(model.transmitter_params()) == before


def test_stage2_updates_the_channel_side(stage1_tiny, tmp_path):
    corpus, model = stage1_tiny
    before = param_hash(model.channel_params())
    tr.train_stage2(model, corpus, epochs=1, batch_size=4, kind="rayleigh",
                    snr_lo=0.0, snr_hi=18.0, dev_snr=9.0, seed=5, out_dir=tmp_path)
    assert param_hash(model.channel_params()) != before


def test_snr_draws_are_uniform_over_the_range():
    lo, hi = 0.0, 18.0
    draws = np.array([tr.draw_snr(lo, hi, seed=7, epoch=e, batch=b)
                      for e in range(10) for b in range(100)])
    assert draws.min() >= lo and draws.max() <= hi
    # one-sample KS statistic against the uniform CDF
    u = np.sort((draws - lo) / (hi - lo))
    n = u.size
    grid = np.arange(1, n + 1) / n
    stat = max(np.abs(grid - u).max(), np.abs(u - (grid - 1 / n)).max())
    assert stat < 0.05


def test_detached_latents_match_pruned_teacher_steps(stage1_tiny):
    corpus, model = stage1_tiny
    sentences = corpus.split("dev")
    cache = tr._detached_latents(model, sentences, batch_size=2)
    assert len(cache) == len(sentences)
    for (states, kept, tokens), s in zip(cache, sentences):
        assert states.shape == (kept.size, TINY_MODEL.state_dim)
        np.testing.assert_array_equal(tokens, s.tokens[s.tokens >= cp.N_SPECIALS])


# ---------------------------------------------------------------------------
# evaluation and reports
# ---------------------------------------------------------------------------


def test_baseline_symbol_count_examples():
    assert tr.baseline_symbol_count(np.zeros((100, 40, 3)), 20) == 2000
    assert 5 * 16 == 80  # proposed cost for c=5 latent steps at k=16
    with pytest.raises(ConfigError):
        tr.baseline_symbol_count(np.zeros((10, 40, 3)), 0)


def test_baseline_rate_matches_per_unit_cost():
    # k symbols per step, one step per `downsample` frames
    assert tr.baseline_rate(md.ModelConfig()) == round(16 / 4) == 4
    assert tr.baseline_rate(TINY_MODEL) == 1  # floor at one symbol per frame


def test_noiseless_channel_equals_channel_free_decode(stage1_tiny):
    corpus, model = stage1_tiny
    sentences = corpus.split("test")
    for kind in ("awgn", "rayleigh"):
        result = tr.evaluate(model, sentences, (3.0,), kind, seed=11, noiseless=True)
        for row, s in zip(result.rows, sentences):
            ref = tr.prune_transcript(s.tokens)
            hyp = tr.transcribe_once(model, s)
            assert row.wer == tr.wer(ref, hyp).wer
            assert row.similarity == tr.similarity(ref, hyp)


def test_evaluate_same_seed_is_identical(stage1_tiny):
    corpus, model = stage1_tiny
    sentences = corpus.split("test")
    a = tr.evaluate(model, sentences, (0.0, 9.0), "rayleigh", seed=4)
    b = tr.evaluate(model, sentences, (0.0, 9.0), "rayleigh", seed=4)
    assert a == b
    c = tr.evaluate(model, sentences, (0.0, 9.0), "rayleigh", seed=5)
    assert a != c


def test_evaluate_rows_cover_the_grid_in_order(stage1_tiny):
    corpus, model = stage1_tiny
    sentences = corpus.split("test")
    snrs = (0.0, 6.0, 12.0)
    result = tr.evaluate(model, sentences, snrs, "awgn", seed=4)
    assert [ (r.snr_db, r.sentence) for r in result.rows ] == \
        [(s, i) for s in snrs for i in range(len(sentences))]
    assert len(result.prune_reports) == len(sentences)


def test_evaluate_visits_pipeline_stages_in_order(stage1_tiny):
    corpus, model = stage1_tiny
    sentences = corpus.split("test")[:2]
    trace = []
    tr.evaluate(model, sentences, (6.0, 12.0), "awgn", seed=4, trace=trace)
    full = ["spectrum", "semantic_encoder", "channel_encoder",
            "channel", "channel_decoder", "semantic_decoder", "metrics"]
    per_sentence = {0: [], 1: []}
    for si, stage in trace:
        per_sentence[si].append(stage)
    for si in per_sentence:
        # first grid point runs the whole pipeline; later ones reuse the
        # transmitter-side cache and rerun from the channel on
        assert per_sentence[si] == full + full[3:]


def test_report_headers_and_means(stage1_tiny, tmp_path):
    corpus, model = stage1_tiny
    result = tr.evaluate(model, corpus.split("test"), (0.0, 12.0), "awgn", seed=4)
    paths = tr.report(result, tmp_path)

    eval_lines = open(paths["eval"]).read().splitlines()
    assert eval_lines[0] == tr.EVAL_HEADER
    assert len(eval_lines) == 1 + len(result.rows)

    summary_lines = open(paths["summary"]).read().splitlines()
    assert summary_lines[0] == tr.SUMMARY_HEADER
    first = summary_lines[1].split(",")
    rows0 = [r for r in result.rows if r.snr_db == 0.0]
    np.testing.assert_allclose(float(first[1]), np.mean([r.wer for r in rows0]), atol=5e-7)
    np.testing.assert_allclose(float(first[2]), np.mean([r.similarity for r in rows0]), atol=5e-7)

    prune_lines = open(paths["prune"]).read().splitlines()
    assert prune_lines[0] == tr.PRUNE_HEADER and len(prune_lines) == 2


def test_report_is_byte_deterministic(stage1_tiny, tmp_path):
    corpus, model = stage1_tiny
    result = tr.evaluate(model, corpus.split("test"), (6.0,), "rayleigh", seed=4)
    paths = tr.report(result, tmp_path)
    first = {k: open(p, "rb").read() for k, p in paths.items()}
    paths = tr.report(result, tmp_path)
    assert {k: open(p, "rb").read() for k, p in paths.items()} == first


def test_epochs_to_target():
    rows = [tr.EpochRow(1, 1.0, 0.5), tr.EpochRow(2, 0.5, 0.09), tr.EpochRow(3, 0.4, 0.2)]
    assert tr.epochs_to_target(rows, 0.10) == 2
    assert tr.epochs_to_target(rows, 0.01) is None


# ---------------------------------------------------------------------------
# joint path
# ---------------------------------------------------------------------------


def test_joint_training_updates_every_parameter_group(tiny_corpus, tmp_path):
    model = md.Model(TINY_MODEL, seed=3)
    tx_before = param_hash(model.transmitter_params())
    ch_before = param_hash(model.channel_params())
    result = tr.train_joint(model, tiny_corpus, epochs=1, batch_size=4, kind="awgn",
                            snr_lo=0.0, snr_hi=18.0, dev_snr=9.0, seed=5, out_dir=tmp_path)
    assert param_hash(model.transmitter_params()) != tx_before
    assert param_hash(model.channel_params()) != ch_before
    assert os.path.exists(result.checkpoint)
    assert (tmp_path / "joint_log.csv").exists()

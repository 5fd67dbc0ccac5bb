import pytest

from semstt import config as cf
from semstt.corpus import CorpusConfig
from semstt.errors import ConfigError
from semstt.model import ModelConfig


def test_empty_text_gives_defaults():
    assert cf.parse_config("") == cf.RunConfig()


def test_comments_and_blank_lines_are_ignored():
    text = "\n# a comment\n  \nseed = 7\n   # another\n"
    assert cf.parse_config(text).seed == 7


def test_parse_reads_every_section():
    text = """
    corpus = data/c.bin
    out = runs/a
    seed = 3
    channel = rayleigh
    stage1_epochs = 2
    stage2_epochs = 4
    batch_size = 5
    snr_lo = 1.5
    snr_hi = 9.0
    dev_snr = 6.0
    eval_snrs = 0,6,12
    model.conv_channels = 4,8
    model.vocab_size = 19
    corpus.vocab_size = 16
    corpus.n_train = 10
    """
    cfg = cf.parse_config(text)
    assert cfg.corpus == "data/c.bin" and cfg.out == "runs/a"
    assert cfg.channel == "rayleigh" and cfg.batch_size == 5
    assert cfg.eval_snrs == (0.0, 6.0, 12.0)
    assert cfg.model.conv_channels == (4, 8) and cfg.model.vocab_size == 19
    assert cfg.corpus_gen.vocab_size == 16 and cfg.corpus_gen.n_train == 10
    # untouched keys keep their defaults
    assert cfg.model.rnn_hidden == ModelConfig().rnn_hidden
    assert cfg.corpus_gen.max_span == CorpusConfig().max_span


def test_format_parse_round_trip():
    cfg = cf.RunConfig(seed=9, channel="rayleigh", snr_lo=2.5, eval_snrs=(3.0, 9.0),
                       model=ModelConfig(vocab_size=19, conv_channels=(4, 8)),
                       corpus_gen=CorpusConfig(vocab_size=16, jitter=0.125))
    assert cf.parse_config(cf.format_config(cfg)) == cfg


def test_overrides_win_over_file_text():
    cfg = cf.parse_config("seed = 1\nout = a\n", seed=5)
    assert cfg.seed == 5 and cfg.out == "a"


@pytest.mark.parametrize("text,fragment", [
    ("bogus_key = 1", "unknown key"),
    ("model.bogus = 1", "unknown key"),
    ("seed = 1\nseed = 2", "duplicate"),
    ("seed = x", "bad value"),
    ("just some words", "expected key = value"),
    ("snr_lo = 9\nsnr_hi = 3", "inverted"),
    ("eval_snrs = ", "bad value"),
    ("batch_size = 0", ">= 1"),
    ("rho = 1.0", "rho"),
    ("eps = 0", "eps"),
    ("model.vocab_size = 10", "specials"),
])
def test_bad_text_is_rejected(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        cf.parse_config(text)


def test_vocab_sizes_must_stay_coupled():
    with pytest.raises(ConfigError, match="specials"):
        cf.RunConfig(corpus_gen=CorpusConfig(vocab_size=16))
    cfg = cf.RunConfig(corpus_gen=CorpusConfig(vocab_size=16),
                       model=ModelConfig(vocab_size=19))
    assert cfg.model.vocab_size == 19


def test_write_and_read_config_files(tmp_path):
    cfg = cf.RunConfig(seed=31)
    path = tmp_path / "run.config"
    cf.write_config(cfg, path)
    assert cf.read_config(path) == cfg
    # byte determinism of the canonical form
    first = path.read_bytes()
    cf.write_config(cfg, path)
    assert path.read_bytes() == first


def test_read_config_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        cf.read_config("/no/such/file.config")

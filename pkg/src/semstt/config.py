"""Run configuration: a flat key = value text format.

One file drives a whole experiment: corpus generation (``corpus.*``
keys), model structure (``model.*`` keys), and the run-level knobs
(training budgets, SNR ranges, seeds, paths). Lines starting with ``#``
and blank lines are ignored; unknown or duplicate keys are rejected so
typos fail loudly. Every command writes its resolved configuration next
to its outputs, and ``format_config`` is canonical: parsing its output
reproduces the same RunConfig.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .channel import AWGN, RAYLEIGH
from .corpus import N_SPECIALS, CorpusConfig
from .errors import ConfigError
from .model import ModelConfig


@dataclass(frozen=True)
class RunConfig:
    """Everything an experiment needs, resolvable up front."""

    corpus: str = "corpus.bin"
    out: str = "out"
    seed: int = 42
    channel: str = AWGN
    stage1_epochs: int = 18
    stage2_epochs: int = 8
    batch_size: int = 4
    rho: float = 0.95
    eps: float = 1e-5
    snr_lo: float = 0.0
    snr_hi: float = 18.0
    dev_snr: float = 9.0
    eval_snrs: tuple = (0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0)
    model: ModelConfig = field(default_factory=ModelConfig)
    corpus_gen: CorpusConfig = field(default_factory=CorpusConfig)

    def __post_init__(self):
        object.__setattr__(self, "eval_snrs", tuple(float(s) for s in self.eval_snrs))
        if self.channel not in (AWGN, RAYLEIGH):
            raise ConfigError(f"channel must be {AWGN!r} or {RAYLEIGH!r}, got {self.channel!r}")
        if self.snr_lo > self.snr_hi:
            raise ConfigError(f"snr range [{self.snr_lo}, {self.snr_hi}] is inverted")
        if not self.eval_snrs:
            raise ConfigError("eval_snrs must be non-empty")
        if min(self.stage1_epochs, self.stage2_epochs) < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must be in [0, 1), got {self.rho}")
        if not self.eps > 0.0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.model.vocab_size != self.corpus_gen.vocab_size + N_SPECIALS:
            raise ConfigError(
                f"model.vocab_size must equal corpus.vocab_size + {N_SPECIALS} specials: "
                f"{self.model.vocab_size} != {self.corpus_gen.vocab_size} + {N_SPECIALS}")


# key -> (attribute name on RunConfig, parser)


def _parse_int(s: str) -> int:
    return int(s, 10)


def _parse_float(s: str) -> float:
    return float(s)


def _parse_int_tuple(s: str) -> tuple:
    return tuple(int(p, 10) for p in s.split(","))


def _parse_float_tuple(s: str) -> tuple:
    return tuple(float(p) for p in s.split(","))


_RUN_KEYS = {
    "corpus": str,
    "out": str,
    "seed": _parse_int,
    "channel": str,
    "stage1_epochs": _parse_int,
    "stage2_epochs": _parse_int,
    "batch_size": _parse_int,
    "rho": _parse_float,
    "eps": _parse_float,
    "snr_lo": _parse_float,
    "snr_hi": _parse_float,
    "dev_snr": _parse_float,
    "eval_snrs": _parse_float_tuple,
}

_MODEL_KEYS = {
    "conv_channels": _parse_int_tuple,
    "rnn_hidden": _parse_int,
    "rnn_schedule": _parse_int_tuple,
    "attn_dim": _parse_int,
    "attn_kernel": _parse_int,
    "attn_filters": _parse_int,
    "state_dim": _parse_int,
    "embed_dim": _parse_int,
    "vocab_size": _parse_int,
    "k": _parse_int,
    "max_decode_len": _parse_int,
}

_CORPUS_KEYS = {
    "vocab_size": _parse_int,
    "n_train": _parse_int,
    "n_dev": _parse_int,
    "n_test": _parse_int,
    "min_tokens": _parse_int,
    "max_tokens": _parse_int,
    "min_span": _parse_int,
    "max_span": _parse_int,
    "jitter": _parse_float,
    "unk_rate": _parse_float,
}


def parse_config(text: str, **overrides) -> RunConfig:
    """Parse key = value text into a RunConfig; overrides win over the file."""
    run, model, corpus = {}, {}, {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            if key.startswith("model."):
                sub = key[len("model."):]
                model[sub] = _MODEL_KEYS[sub](value)
            elif key.startswith("corpus."):
                sub = key[len("corpus."):]
                corpus[sub] = _CORPUS_KEYS[sub](value)
            elif key in _RUN_KEYS:
                run[key] = _RUN_KEYS[key](value)
            else:
                raise KeyError(key)
        except KeyError:
            raise ConfigError(f"line {lineno}: unknown key {key!r}") from None
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    run.update(overrides)
    return RunConfig(model=ModelConfig(**model), corpus_gen=CorpusConfig(**corpus), **run)


def read_config(path, **overrides) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    return parse_config(text, **overrides)


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: RunConfig) -> str:
    """Canonical text form: every key, fixed order, round-trips exactly."""
    lines = ["# resolved run configuration"]
    for key in _RUN_KEYS:
        lines.append(f"{key} = {_fmt(getattr(cfg, key))}")
    for section, obj, keys in (("model", cfg.model, _MODEL_KEYS),
                               ("corpus", cfg.corpus_gen, _CORPUS_KEYS)):
        for key in keys:
            lines.append(f"{section}.{key} = {_fmt(getattr(obj, key))}")
    return "\n".join(lines) + "\n"


def write_config(cfg: RunConfig, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_config(cfg))

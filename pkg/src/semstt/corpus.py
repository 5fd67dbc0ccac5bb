"""Deterministic synthetic speech corpus with known token-frame alignment.

Each content word owns a random prototype filter-bank vector. A sentence
is sampled as a token sequence; every token occurrence emits a span of
frames (prototype + Gaussian jitter, linear cross-fades at span
boundaries), so the number of frames greatly exceeds the number of
tokens, the way real speech spectra outnumber words. The ground-truth
alignment (which frames belong to which token) is kept.

A configurable fraction of tokens is replaced by UNK in the target while
the spectrum uses a dedicated out-of-vocabulary prototype: the model must
learn to emit UNK so that downstream pruning has something to remove.

Generation is reproducible: every sentence draws from its own
counter-based stream keyed by (seed, sentence index), so the corpus is
byte-identical regardless of generation order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, DataFormatError, ShapeError
from .frontend import N_CHANNELS, N_FILTERS, SpectrumBatch, spectrum_from_fbank
from .seeding import rng_stream

PAD_ID = 0
UNK_ID = 1
EOS_ID = 2
N_SPECIALS = 3
SPECIAL_NAMES = ("<pad>", "<unk>", "<eos>")

SPLITS = ("train", "dev", "test")

_FADE = 2  # frames blended on each side of a span boundary


@dataclass(frozen=True)
class Vocabulary:
    """Ordered word list; ids 0..2 are PAD/UNK/EOS, content starts at 3."""

    words: tuple

    def __post_init__(self):
        if len(self.words) < 1:
            raise ConfigError("vocabulary needs at least one content word")
        if len(set(self.words)) != len(self.words):
            raise ConfigError("vocabulary words must be unique")
        object.__setattr__(self, "words", tuple(self.words))

    @property
    def size(self) -> int:
        return N_SPECIALS + len(self.words)

    def encode(self, word: str) -> int:
        try:
            return N_SPECIALS + self.words.index(word)
        except ValueError:
            return UNK_ID

    def decode(self, token_id: int) -> str:
        if 0 <= token_id < N_SPECIALS:
            return SPECIAL_NAMES[token_id]
        if N_SPECIALS <= token_id < self.size:
            return self.words[token_id - N_SPECIALS]
        raise ShapeError(f"token id {token_id} outside vocabulary of size {self.size}")

    @classmethod
    def default(cls, n_words: int = 64) -> "Vocabulary":
        return cls(tuple(f"w{i:03d}" for i in range(n_words)))


@dataclass
class Sentence:
    """Target token ids, per-token frame spans, and the spectrum slab."""

    tokens: np.ndarray        # (m,) ids in {UNK} + content range
    span_lengths: np.ndarray  # (m,) frames owned by each token
    spectrum: np.ndarray      # (n_frames, 40, 3)
    split: str

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.span_lengths = np.asarray(self.span_lengths, dtype=np.int64)
        self.spectrum = np.asarray(self.spectrum, dtype=np.float64)
        if self.tokens.ndim != 1 or self.tokens.size == 0:
            raise ShapeError("sentence needs at least one token")
        if np.any(self.tokens == PAD_ID) or np.any(self.tokens == EOS_ID):
            raise ShapeError("sentence tokens must not contain PAD or EOS")
        if self.span_lengths.shape != self.tokens.shape or self.span_lengths.min() < 1:
            raise ShapeError("span lengths must be positive, one per token")
        if self.split not in SPLITS:
            raise ShapeError(f"unknown split {self.split!r}")
        expect = (int(self.span_lengths.sum()), N_FILTERS, N_CHANNELS)
        if self.spectrum.shape != expect:
            raise ShapeError(f"spectrum shape {self.spectrum.shape} != spans total {expect}")

    @property
    def n_frames(self) -> int:
        return self.spectrum.shape[0]

    def span_starts(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.span_lengths)[:-1]))

    def frame_owner(self) -> np.ndarray:
        """(n_frames,) index of the token owning each frame."""
        return np.repeat(np.arange(self.tokens.size), self.span_lengths)

    def __eq__(self, other):
        return (isinstance(other, Sentence)
                and np.array_equal(self.tokens, other.tokens)
                and np.array_equal(self.span_lengths, other.span_lengths)
                and np.array_equal(self.spectrum, other.spectrum)
                and self.split == other.split)


@dataclass(frozen=True)
class CorpusConfig:
    vocab_size: int = 64
    n_train: int = 1000
    n_dev: int = 100
    n_test: int = 100
    min_tokens: int = 3
    max_tokens: int = 8
    min_span: int = 16
    max_span: int = 24
    jitter: float = 0.05
    unk_rate: float = 0.02

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ConfigError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if not (1 <= self.min_tokens <= self.max_tokens):
            raise ConfigError(f"bad token length range [{self.min_tokens}, {self.max_tokens}]")
        if not (1 <= self.min_span <= self.max_span):
            raise ConfigError(f"bad span range [{self.min_span}, {self.max_span}]")
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ConfigError("every split needs at least one sentence")
        if not (0.0 <= self.unk_rate < 1.0) or self.jitter < 0.0:
            raise ConfigError("unk_rate must be in [0,1) and jitter non-negative")


@dataclass
class Corpus:
    vocabulary: Vocabulary
    sentences: list
    seed: int
    config: CorpusConfig

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}")
        return [s for s in self.sentences if s.split == name]

    def __eq__(self, other):
        return (isinstance(other, Corpus)
                and self.vocabulary == other.vocabulary
                and self.seed == other.seed
                and self.config == other.config
                and self.sentences == other.sentences)


def token_prototypes(config: CorpusConfig, seed: int) -> np.ndarray:
    """(vocab_size + specials, 40) prototype fbank vectors.

    Rows PAD/EOS stay zero (never voiced); UNK gets its own prototype so
    out-of-vocabulary speech is acoustically real.
    """
    rng = rng_stream(seed, 0)
    protos = np.zeros((N_SPECIALS + config.vocab_size, N_FILTERS))
    protos[UNK_ID] = rng.normal(size=N_FILTERS)
    protos[N_SPECIALS:] = rng.normal(size=(config.vocab_size, N_FILTERS))
    return protos


def _sentence_fbank(spoken_ids, span_lengths, protos, jitter, rng):
    base = np.repeat(protos[spoken_ids], span_lengths, axis=0)
    # linear cross-fade around each interior span boundary
    starts = np.cumsum(span_lengths)[:-1]
    n = base.shape[0]
    for b, left, right in zip(starts, spoken_ids[:-1], spoken_ids[1:]):
        for d in range(-_FADE, _FADE):
            t = b + d
            if 0 <= t < n:
                alpha = (d + _FADE + 0.5) / (2 * _FADE)
                base[t] = (1.0 - alpha) * protos[left] + alpha * protos[right]
    if jitter > 0:
        base = base + jitter * rng.normal(size=base.shape)
    return base


def gen_sentence(config: CorpusConfig, seed: int, index: int, split: str,
                 protos: np.ndarray) -> Sentence:
    rng = rng_stream(seed, 1, index)
    m = int(rng.integers(config.min_tokens, config.max_tokens + 1))
    content = rng.integers(N_SPECIALS, N_SPECIALS + config.vocab_size, size=m)
    unk_mask = rng.random(m) < config.unk_rate
    while unk_mask.all():  # keep at least one content token per sentence
        unk_mask[int(rng.integers(m))] = False
    tokens = np.where(unk_mask, UNK_ID, content)
    spans = rng.integers(config.min_span, config.max_span + 1, size=m)
    # the spectrum voices UNK positions with the dedicated OOV prototype
    fb = _sentence_fbank(tokens, spans, protos, config.jitter, rng)
    return Sentence(tokens, spans, spectrum_from_fbank(fb), split)


def gen_corpus(config: CorpusConfig, seed: int) -> Corpus:
    vocab = Vocabulary.default(config.vocab_size)
    protos = token_prototypes(config, seed)
    counts = {"train": config.n_train, "dev": config.n_dev, "test": config.n_test}
    sentences = []
    index = 0
    for split in SPLITS:
        for _ in range(counts[split]):
            sentences.append(gen_sentence(config, seed, index, split, protos))
            index += 1
    return Corpus(vocab, sentences, seed, config)


def batch_pad(sentences, max_target_len: int):
    """Batch sentences: (SpectrumBatch, targets (B, U), loss mask (B, U)).

    Targets are the token ids followed by one EOS, PAD-filled to
    max_target_len; the mask is 1 on tokens and the EOS, 0 on PAD.
    """
    if not sentences:
        raise ShapeError("batch_pad: empty sentence list")
    b = len(sentences)
    targets = np.full((b, max_target_len), PAD_ID, dtype=np.int64)
    mask = np.zeros((b, max_target_len))
    for i, s in enumerate(sentences):
        m = s.tokens.size
        if m + 1 > max_target_len:
            raise ShapeError(f"sentence of {m} tokens + EOS exceeds max_target_len {max_target_len}")
        targets[i, :m] = s.tokens
        targets[i, m] = EOS_ID
        mask[i, :m + 1] = 1.0
    batch = SpectrumBatch.from_items([s.spectrum for s in sentences])
    return batch, targets, mask


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_MAGIC = b"SEMSTTCP"
_VERSION = 1


def save_corpus(corpus: Corpus, path) -> None:
    """Magic + version + JSON header + concatenated f8 spectrum payloads."""
    header = {
        "seed": corpus.seed,
        "config": asdict(corpus.config),
        "words": list(corpus.vocabulary.words),
        "sentences": [
            {
                "tokens": s.tokens.tolist(),
                "spans": s.span_lengths.tolist(),
                "split": s.split,
            }
            for s in corpus.sentences
        ],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for s in corpus.sentences:
            f.write(np.ascontiguousarray(s.spectrum, dtype="<f8").tobytes())


def load_corpus(path) -> Corpus:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:8] != _MAGIC:
        raise DataFormatError(f"{path}: not a corpus file (bad magic)")
    (version,) = struct.unpack("<I", blob[8:12])
    if version != _VERSION:
        raise DataFormatError(f"{path}: unsupported corpus version {version}")
    (head_len,) = struct.unpack("<I", blob[12:16])
    if 16 + head_len > len(blob):
        raise DataFormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16:16 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: corrupt header ({exc})") from exc
    config = CorpusConfig(**header["config"])
    vocab = Vocabulary(tuple(header["words"]))
    off = 16 + head_len
    sentences = []
    slab = N_FILTERS * N_CHANNELS
    for meta in header["sentences"]:
        spans = np.asarray(meta["spans"], dtype=np.int64)
        n = int(spans.sum()) * slab * 8
        if off + n > len(blob):
            raise DataFormatError(f"{path}: truncated spectrum payload")
        spectrum = np.frombuffer(blob[off:off + n], dtype="<f8").reshape(-1, N_FILTERS, N_CHANNELS)
        off += n
        sentences.append(Sentence(np.asarray(meta["tokens"], dtype=np.int64),
                                  spans, spectrum.copy(), meta["split"]))
    if off != len(blob):
        raise DataFormatError(f"{path}: trailing bytes after last sentence")
    return Corpus(vocab, sentences, header["seed"], config)

"""The learned transceiver: semantic encoder/decoder around a channel pair.

Transmitter side: a conv stack halves the time axis per block, a
bidirectional LSTM pyramid thins it further per its downsample schedule,
and an attention decoder walks the resulting feature sequence emitting
one latent state (and a token distribution) per output step. A two-layer
FC channel encoder turns surviving latent states into complex symbols.

Receiver side: a two-layer FC channel decoder maps received symbols back
to latent space and a single FC layer reads tokens off each latent.

Everything is expressed with autodiff tensors so the same code path
serves training and inference; inference wraps calls in no_grad.

Layout notes, fixed for the wire format:
  - channel symbols interleave (real, imaginary) pairs: an FC output of
    width 2k reshapes to k complex symbols, even index real, odd imaginary;
  - transmit power is normalized per sequence to unit mean |x|^2;
  - argmax tie-breaks choose the lowest token id.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .channel import ChannelSignal
from .corpus import EOS_ID
from .errors import ConfigError, NumericsError, ShapeError
from .frontend import N_CHANNELS, N_FILTERS, SpectrumBatch
from .seeding import rng_stream


@dataclass(frozen=True)
class ModelConfig:
    """Structural hyperparameters. Defaults are the desk-scale setting."""

    conv_channels: tuple = (8,)   # one conv block per entry; each halves time
    rnn_hidden: int = 32          # per direction
    rnn_schedule: tuple = (2, 1)  # per-layer keep-every-s downsampling
    attn_dim: int = 32
    attn_kernel: int = 11
    attn_filters: int = 4
    state_dim: int = 64           # decoder state and latent width d
    embed_dim: int = 32
    vocab_size: int = 67          # 3 specials + content words
    k: int = 16                   # complex symbols per latent step
    max_decode_len: int = 20

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        object.__setattr__(self, "rnn_schedule", tuple(self.rnn_schedule))
        dims = (self.rnn_hidden, self.attn_dim, self.attn_filters, self.state_dim,
                self.embed_dim, self.k, self.max_decode_len)
        if not self.conv_channels or min(self.conv_channels) < 1:
            raise ConfigError(f"conv_channels must be non-empty positive, got {self.conv_channels}")
        if not self.rnn_schedule or min(self.rnn_schedule) < 1:
            raise ConfigError(f"rnn_schedule must be non-empty positive, got {self.rnn_schedule}")
        if min(dims) < 1:
            raise ConfigError("all dimensions must be >= 1")
        if self.vocab_size < 4:
            raise ConfigError(f"vocab_size must be >= 4 (3 specials + content), got {self.vocab_size}")
        if self.attn_kernel % 2 == 0:
            raise ConfigError(f"attn_kernel must be odd, got {self.attn_kernel}")

    @property
    def conv_factor(self) -> int:
        return 2 ** len(self.conv_channels)

    @property
    def downsample(self) -> int:
        d = self.conv_factor
        for s in self.rnn_schedule:
            d *= s
        return d

    @property
    def enc_dim(self) -> int:
        return 2 * self.rnn_hidden

    @property
    def conv_feat_dim(self) -> int:
        freq = N_FILTERS
        for _ in self.conv_channels:
            freq = (freq + 1) // 2
        return freq * self.conv_channels[-1]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class EncoderFeatures:
    """Encoder output sequence (B, T_enc, 2*hidden) with per-item lengths."""

    values: ad.Tensor
    lengths: np.ndarray

    def mask(self) -> np.ndarray:
        return (np.arange(self.values.shape[1]) < self.lengths[:, None]).astype(np.float64)


@dataclass
class AlignedLatents:
    """Per output step: attention row, context, decoder state, token logits."""

    attention: ad.Tensor  # (B, q, T_enc)
    contexts: ad.Tensor   # (B, q, 2*hidden)
    states: ad.Tensor     # (B, q, d) -- the latent sequence Z
    logits: ad.Tensor     # (B, q, vocab)

    @property
    def q(self) -> int:
        return self.states.shape[1]

    def argmax_tokens(self) -> np.ndarray:
        return np.argmax(self.logits.data, axis=-1)


@dataclass
class LatentSemantics:
    """Surviving latent states after pruning, still in emission order."""

    values: ad.Tensor       # (c, d)
    kept_steps: np.ndarray  # strictly increasing original step indices

    def __post_init__(self):
        self.kept_steps = np.asarray(self.kept_steps, dtype=np.int64)
        if self.values.shape[0] != self.kept_steps.size:
            raise ShapeError("kept_steps must index every surviving latent")
        if self.kept_steps.size and np.any(np.diff(self.kept_steps) <= 0):
            raise ShapeError("kept_steps must be strictly increasing")

    @property
    def c(self) -> int:
        return self.values.shape[0]


def _ceil_div(n, d):
    return -(-n // d)


def _mask_steps(x: ad.Tensor, lengths: np.ndarray) -> ad.Tensor:
    """Zero out padded time steps (axis 1) so padding stays inert."""
    t = x.shape[1]
    mask = (np.arange(t) < lengths[:, None]).astype(np.float64)
    mask = mask.reshape(mask.shape + (1,) * (x.data.ndim - 2))
    return ad.mul(x, ad.constant(np.broadcast_to(mask, x.shape).copy()))


class Model:
    """Parameter container plus the forward passes of every stage."""

    def __init__(self, config: ModelConfig, seed: int = 0, params: dict | None = None):
        self.config = config
        self.params = params if params is not None else self._init_params(seed)

    # ------------------------------------------------------------------
    # parameters
    # ------------------------------------------------------------------

    def _init_params(self, seed: int) -> dict:
        cfg = self.config
        rng = rng_stream(seed, 2)
        p: dict[str, ad.Tensor] = {}

        def fc(name, d_in, d_out, bias=True):
            p[f"{name}/w"] = ad.parameter((d_in, d_out), rng, fan_in=d_in)
            if bias:
                p[f"{name}/b"] = ad.Tensor(np.zeros(d_out), requires_grad=True)

        c_in = N_CHANNELS
        for i, c_out in enumerate(cfg.conv_channels):
            for tag in ("a", "b"):
                p[f"conv{i}{tag}/w"] = ad.parameter((3, 3, c_in, c_out), rng, fan_in=9 * c_in)
                p[f"conv{i}{tag}/b"] = ad.Tensor(np.zeros(c_out), requires_grad=True)
                c_in = c_out

        def lstm(name, d_in, hidden):
            p[f"{name}/w"] = ad.parameter((d_in + hidden, 4 * hidden), rng, fan_in=d_in + hidden)
            b = np.zeros(4 * hidden)
            b[hidden:2 * hidden] = 1.0  # forget-gate bias starts open
            p[f"{name}/b"] = ad.Tensor(b, requires_grad=True)

        d_in = cfg.conv_feat_dim
        for j in range(len(cfg.rnn_schedule)):
            lstm(f"enc{j}/fw", d_in, cfg.rnn_hidden)
            lstm(f"enc{j}/bw", d_in, cfg.rnn_hidden)
            d_in = cfg.enc_dim

        fc("att/query", cfg.state_dim, cfg.attn_dim, bias=False)
        fc("att/key", cfg.enc_dim, cfg.attn_dim, bias=False)
        p["att/loc/conv"] = ad.parameter((cfg.attn_kernel, 1, cfg.attn_filters),
                                         rng, fan_in=cfg.attn_kernel)
        fc("att/loc", cfg.attn_filters, cfg.attn_dim, bias=False)
        p["att/bias"] = ad.Tensor(np.zeros(cfg.attn_dim), requires_grad=True)
        fc("att/v", cfg.attn_dim, 1, bias=False)

        p["dec/embed"] = ad.parameter((cfg.vocab_size, cfg.embed_dim),
                                      rng, fan_in=cfg.embed_dim)
        lstm("dec/lstm", cfg.enc_dim + cfg.embed_dim, cfg.state_dim)
        fc("dec/out", cfg.state_dim, cfg.vocab_size)

        fc("tx/fc1", cfg.state_dim, cfg.state_dim)
        fc("tx/fc2", cfg.state_dim, 2 * cfg.k)
        fc("rx/fc1", 2 * cfg.k, cfg.state_dim)
        fc("rx/fc2", cfg.state_dim, cfg.state_dim)
        fc("rx/out", cfg.state_dim, cfg.vocab_size)
        return p

    def transmitter_params(self) -> dict:
        """Encoder, attention, and decoder parameters (first training stage)."""
        return {k: v for k, v in self.params.items()
                if k.split("/")[0].startswith(("conv", "enc", "att", "dec"))}

    def channel_params(self) -> dict:
        """Channel encoder/decoder and receiver readout (second stage)."""
        return {k: v for k, v in self.params.items()
                if k.startswith(("tx/", "rx/"))}

    def count_params(self) -> int:
        return sum(p.size for p in self.params.values())

    # ------------------------------------------------------------------
    # encoder
    # ------------------------------------------------------------------

    def encode(self, batch: SpectrumBatch) -> EncoderFeatures:
        cfg = self.config
        lengths = batch.lengths.copy()
        if lengths.min() < cfg.downsample:
            raise ShapeError(f"sentence of {int(lengths.min())} frames is shorter than "
                             f"the downsample factor {cfg.downsample}")
        x = ad.constant(batch.data)  # (B, N, 40, 3)
        for i in range(len(cfg.conv_channels)):
            for tag in ("a", "b"):
                x = ad.relu(ad.bias_add(ad.conv2d(x, self.params[f"conv{i}{tag}/w"]),
                                        self.params[f"conv{i}{tag}/b"]))
                x = _mask_steps(x, lengths)
            x = ad.maxpool2x2(x)
            lengths = _ceil_div(lengths, 2)
            x = _mask_steps(x, lengths)
        b, t = x.shape[0], x.shape[1]
        x = ad.reshape(x, (b, t, cfg.conv_feat_dim))

        for j, stride in enumerate(cfg.rnn_schedule):
            fw = self._lstm_sweep(x, f"enc{j}/fw", lengths)
            bw = ad.reverse_time(
                self._lstm_sweep(ad.reverse_time(x, lengths), f"enc{j}/bw", lengths),
                lengths)
            x = _mask_steps(ad.concat(fw, bw, axis=2), lengths)
            if stride > 1:
                x = ad.stride_time(x, stride)
                lengths = _ceil_div(lengths, stride)
        return EncoderFeatures(x, lengths)

    def _lstm_sweep(self, x: ad.Tensor, name: str, lengths) -> ad.Tensor:
        """Run an LSTM over axis 1, returning all hidden states (B, T, H)."""
        b, t, _ = x.shape
        hidden = self.params[f"{name}/b"].shape[0] // 4
        h = ad.constant(np.zeros((b, hidden)))
        c = ad.constant(np.zeros((b, hidden)))
        outs = []
        for step in range(t):
            xt = ad.reshape(ad.slice_axis(x, 1, step, step + 1), (b, x.shape[2]))
            h, c = ad.lstm_step(xt, h, c, self.params[f"{name}/w"], self.params[f"{name}/b"])
            outs.append(ad.reshape(h, (b, 1, hidden)))
        return outs[0] if t == 1 else ad.concat(*outs, axis=1)

    # ------------------------------------------------------------------
    # attention decoder
    # ------------------------------------------------------------------

    def precompute_keys(self, feats: EncoderFeatures) -> ad.Tensor:
        b, t, e = feats.values.shape
        flat = ad.reshape(feats.values, (b * t, e))
        return ad.reshape(ad.matmul(flat, self.params["att/key/w"]),
                          (b, t, self.config.attn_dim))

    def initial_attention(self, feats: EncoderFeatures) -> np.ndarray:
        """Uniform over each item's valid encoder steps."""
        mask = feats.mask()
        return mask / mask.sum(axis=1, keepdims=True)

    def initial_state(self, batch_size: int):
        d = self.config.state_dim
        return ad.constant(np.zeros((batch_size, d))), ad.constant(np.zeros((batch_size, d)))

    def attend_step(self, feats: EncoderFeatures, keys: ad.Tensor, state, attn_prev,
                    token_prev):
        """One decoder step given the previous attention row and token.

        Returns (attn, context, new_state, logits); state is an (h, c) pair.
        """
        cfg = self.config
        b, t, _ = feats.values.shape
        if not isinstance(attn_prev, ad.Tensor):
            attn_prev = ad.constant(attn_prev)
        sums = attn_prev.data.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise NumericsError(f"previous attention rows must sum to 1, got {sums}")

        h_prev, c_prev = state
        query = ad.matmul(h_prev, self.params["att/query/w"])          # (B, A)
        loc = ad.conv1d(ad.reshape(attn_prev, (b, t, 1)), self.params["att/loc/conv"])
        loc = ad.reshape(ad.matmul(ad.reshape(loc, (b * t, cfg.attn_filters)),
                                   self.params["att/loc/w"]), (b, t, cfg.attn_dim))
        pre = ad.tanh(ad.bias_add(ad.add_time(ad.add(keys, loc), query),
                                  self.params["att/bias"]))            # (B, T, A)
        energy = ad.reshape(ad.matmul(ad.reshape(pre, (b * t, cfg.attn_dim)),
                                      self.params["att/v/w"]), (b, t))
        attn = ad.masked_softmax(energy, ad.constant(feats.mask()))
        context = ad.weighted_sum_time(attn, feats.values)             # (B, 2H)

        emb = ad.embed(self.params["dec/embed"], token_prev)
        h, c = ad.lstm_step(ad.concat(context, emb, axis=1), h_prev, c_prev,
                            self.params["dec/lstm/w"], self.params["dec/lstm/b"])
        logits = ad.bias_add(ad.matmul(h, self.params["dec/out/w"]),
                             self.params["dec/out/b"])
        return attn, context, (h, c), logits

    def decode_sequence(self, feats: EncoderFeatures, targets: np.ndarray | None = None,
                        max_len: int | None = None, mode: str = "teacher_forced") -> AlignedLatents:
        """Run the decoder over a whole batch.

        teacher_forced feeds ground-truth previous tokens and emits exactly
        targets.shape[1] steps. greedy feeds back its own argmax and stops
        after EOS or max_len steps (batch of one).
        """
        b = feats.values.shape[0]
        if mode == "teacher_forced":
            if targets is None:
                raise ConfigError("teacher_forced decoding requires targets")
            steps = targets.shape[1]
        elif mode == "greedy":
            max_len = self.config.max_decode_len if max_len is None else max_len
            if max_len < 1:
                raise ConfigError(f"max_len must be >= 1, got {max_len}")
            if b != 1:
                raise ShapeError("greedy decoding runs one sentence at a time")
            steps = max_len
        else:
            raise ConfigError(f"unknown decode mode {mode!r}")

        keys = self.precompute_keys(feats)
        state = self.initial_state(b)
        attn = self.initial_attention(feats)
        token_prev = np.full(b, EOS_ID, dtype=np.int64)  # EOS doubles as start token
        rows = {"attention": [], "contexts": [], "states": [], "logits": []}
        for step in range(steps):
            attn, context, state, logits = self.attend_step(feats, keys, state, attn, token_prev)
            for key, val in (("attention", attn), ("contexts", context),
                             ("states", state[0]), ("logits", logits)):
                rows[key].append(ad.reshape(val, (b, 1) + val.shape[1:]))
            if mode == "teacher_forced":
                token_prev = targets[:, step]
            else:
                token_prev = np.argmax(logits.data, axis=-1)
                if token_prev[0] == EOS_ID:
                    break
        cat = {key: (vals[0] if len(vals) == 1 else ad.concat(*vals, axis=1))
               for key, vals in rows.items()}
        return AlignedLatents(**cat)

    # ------------------------------------------------------------------
    # channel encoder / decoder
    # ------------------------------------------------------------------

    def channel_encode(self, latents: LatentSemantics):
        """Latent steps to unit-power complex symbols.

        Returns (sym, signal): sym is the in-graph (c, 2k) tensor of
        interleaved components after power normalization; signal is the
        same data as k*c complex symbols for the channel simulator.
        """
        cfg = self.config
        if latents.c < 1:
            raise ShapeError("cannot transmit an empty latent sequence")
        hidden = ad.relu(ad.bias_add(ad.matmul(latents.values, self.params["tx/fc1/w"]),
                                     self.params["tx/fc1/b"]))
        raw = ad.bias_add(ad.matmul(hidden, self.params["tx/fc2/w"]),
                          self.params["tx/fc2/b"])               # (c, 2k)
        power = ad.scale(ad.sum_all(ad.mul(raw, raw)), 1.0 / (latents.c * cfg.k))
        if power.data <= 0.0:
            raise NumericsError("all-zero channel-encoder output: transmit power undefined")
        gain = ad.div(ad.constant(1.0), ad.sqrt(power))
        sym = ad.mul_scalar(raw, gain)
        pairs = sym.data.reshape(latents.c * cfg.k, 2)
        signal = ChannelSignal(pairs[:, 0] + 1j * pairs[:, 1], cfg.k)
        return sym, signal

    def received_to_tensor(self, signal: ChannelSignal) -> ad.Tensor:
        """Undo the complex interleave: k*c symbols -> (c, 2k) constant."""
        c = signal.symbols.size // signal.k
        pairs = np.stack([signal.symbols.real, signal.symbols.imag], axis=-1)
        return ad.constant(pairs.reshape(c, 2 * signal.k))

    def channel_decode(self, received) -> ad.Tensor:
        """Received symbols back to latent space, (c, 2k) -> (c, d)."""
        cfg = self.config
        if isinstance(received, ChannelSignal):
            if received.k != cfg.k:
                raise ShapeError(f"signal carries k={received.k}, model expects {cfg.k}")
            received = self.received_to_tensor(received)
        if received.shape[-1] != 2 * cfg.k:
            raise ShapeError(f"expected (c, {2 * cfg.k}) symbol components, got {received.shape}")
        hidden = ad.relu(ad.bias_add(ad.matmul(received, self.params["rx/fc1/w"]),
                                     self.params["rx/fc1/b"]))
        return ad.bias_add(ad.matmul(hidden, self.params["rx/fc2/w"]),
                           self.params["rx/fc2/b"])

    def semantic_decode(self, latents: ad.Tensor):
        """Latents to token ids: FC then argmax (ties take the lowest id)."""
        if latents.shape[0] == 0:
            return ad.constant(np.zeros((0, self.config.vocab_size))), np.zeros(0, dtype=np.int64)
        logits = ad.bias_add(ad.matmul(latents, self.params["rx/out/w"]),
                             self.params["rx/out/b"])
        return logits, np.argmax(logits.data, axis=-1)

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def save(self, path) -> None:
        ad.save_checkpoint(path, self.params, {"config": self.config.to_dict()})

    @classmethod
    def load(cls, path) -> "Model":
        params, meta = ad.load_checkpoint(path)
        return cls(ModelConfig.from_dict(meta["config"]), params=params)

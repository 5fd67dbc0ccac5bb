"""Speech frontend: raw 16 kHz audio to log mel filter-bank spectra.

The representation is 25 ms Hamming-windowed frames every 10 ms, a
512-point FFT power spectrum, 40 triangular mel filters over 0-8000 Hz,
log-compressed, plus first- and second-order regression deltas. Each
frame becomes a (40, 3) slab: channel 0 = log-fbank, 1 = delta,
2 = delta-delta.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, ShapeError

SAMPLE_RATE = 16000
WINDOW = 400    # 25 ms at 16 kHz
SHIFT = 160     # 10 ms
N_FFT = 512     # next power of two above the window
N_FILTERS = 40
F_MAX = 8000.0
LOG_FLOOR = 1e-10
DELTA_WINDOW = 2
N_CHANNELS = 3


@dataclass(frozen=True)
class AudioClip:
    """Mono 16 kHz signed 16-bit PCM audio."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise DataFormatError(f"sample rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        arr = np.asarray(self.samples, dtype=np.int16)
        if arr.ndim != 1:
            raise DataFormatError(f"samples must be mono 1-D, got shape {arr.shape}")
        if arr.size < WINDOW:
            raise DataFormatError(f"clip has {arr.size} samples, need at least {WINDOW}")
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.size


@dataclass
class SpectrumBatch:
    """Padded batch of spectra: data (B, N, 40, 3), true frame counts in lengths."""

    data: np.ndarray
    lengths: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        b, n = self.data.shape[:2]
        if self.data.ndim != 4 or self.data.shape[2:] != (N_FILTERS, N_CHANNELS):
            raise ShapeError(f"spectrum batch must be (B, N, {N_FILTERS}, {N_CHANNELS}), got {self.data.shape}")
        if self.lengths.shape != (b,) or self.lengths.min() < 1 or self.lengths.max() > n:
            raise ShapeError(f"lengths {self.lengths} invalid for batch of {b} x {n} frames")
        for i, n_i in enumerate(self.lengths):
            if np.any(self.data[i, n_i:]):
                raise ShapeError(f"item {i}: nonzero padding beyond frame {n_i}")

    @classmethod
    def from_items(cls, spectra) -> "SpectrumBatch":
        """Stack per-item (n_i, 40, 3) arrays, zero-padding to the longest."""
        lengths = np.array([s.shape[0] for s in spectra], dtype=np.int64)
        data = np.zeros((len(spectra), int(lengths.max()), N_FILTERS, N_CHANNELS))
        for i, s in enumerate(spectra):
            data[i, :s.shape[0]] = s
        return cls(data, lengths)

    def frame_mask(self) -> np.ndarray:
        """(B, N) float mask: 1 on real frames, 0 on padding."""
        return (np.arange(self.data.shape[1]) < self.lengths[:, None]).astype(np.float64)


def hamming_window(n: int = WINDOW) -> np.ndarray:
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / (n - 1))


def frame_count(n_samples: int) -> int:
    if n_samples < WINDOW:
        raise ShapeError(f"{n_samples} samples is shorter than one {WINDOW}-sample window")
    return (n_samples - WINDOW) // SHIFT + 1


def frame_signal(clip: AudioClip) -> np.ndarray:
    """Slice a clip into overlapping Hamming-windowed frames, (N, 400)."""
    x = clip.samples.astype(np.float64)
    n = frame_count(x.size)
    idx = np.arange(WINDOW)[None, :] + SHIFT * np.arange(n)[:, None]
    return x[idx] * hamming_window()


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filter_centers() -> np.ndarray:
    """Center frequencies (Hz) of the 40 filters."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(F_MAX), N_FILTERS + 2))
    return edges[1:-1]


def mel_filterbank() -> np.ndarray:
    """Triangular filters evaluated at FFT bin frequencies, (40, 257)."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(F_MAX), N_FILTERS + 2))
    bins = np.arange(N_FFT // 2 + 1) * SAMPLE_RATE / N_FFT
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lo) / (mid - lo)
    falling = (hi - bins) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


_FILTERS = mel_filterbank()


def fbank(frames: np.ndarray) -> np.ndarray:
    """Log mel filter-bank coefficients, (N, 400) windowed frames -> (N, 40)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != WINDOW:
        raise ShapeError(f"expected (N, {WINDOW}) frames, got {frames.shape}")
    power = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    return np.log(np.maximum(power @ _FILTERS.T, LOG_FLOOR))


def deltas(coeffs: np.ndarray, window: int = DELTA_WINDOW) -> np.ndarray:
    """Regression deltas over time (axis 0) with edge replication.

    d_t = sum_w w * (c_{t+w} - c_{t-w}) / (2 * sum_w w^2)
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[0] < 1:
        raise ShapeError(f"expected (N, C) coefficients, got {coeffs.shape}")
    padded = np.pad(coeffs, ((window, window), (0, 0)), mode="edge")
    n = coeffs.shape[0]
    out = np.zeros_like(coeffs)
    for w in range(1, window + 1):
        out += w * (padded[window + w:window + w + n] - padded[window - w:window - w + n])
    return out / (2.0 * sum(w * w for w in range(1, window + 1)))


def spectrum_from_fbank(fb: np.ndarray) -> np.ndarray:
    """Stack fbank with its derivatives into the (N, 40, 3) slab."""
    d1 = deltas(fb)
    return np.stack([fb, d1, deltas(d1)], axis=-1)


def clip_to_spectrum(clip: AudioClip) -> np.ndarray:
    return spectrum_from_fbank(fbank(frame_signal(clip)))


def load_wav(path) -> AudioClip:
    """Read a mono 16-bit 16 kHz PCM WAV file into an AudioClip."""
    try:
        with wave.open(str(path), "rb") as f:
            if f.getnchannels() != 1:
                raise DataFormatError(f"{path}: expected 1 channel, got {f.getnchannels()}")
            if f.getsampwidth() != 2:
                raise DataFormatError(f"{path}: expected 16-bit samples, got {8 * f.getsampwidth()}-bit")
            if f.getframerate() != SAMPLE_RATE:
                raise DataFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {f.getframerate()}")
            if f.getcomptype() != "NONE":
                raise DataFormatError(f"{path}: expected PCM, got compression {f.getcomptype()!r}")
            raw = f.readframes(f.getnframes())
    except wave.Error as exc:
        raise DataFormatError(f"{path}: not a PCM WAV file ({exc})") from exc
    return AudioClip(np.frombuffer(raw, dtype="<i2"))


def save_wav(path, clip: AudioClip) -> None:
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(clip.sample_rate)
        f.writeframes(clip.samples.astype("<i2").tobytes())

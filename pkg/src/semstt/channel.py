"""Physical channel simulation: AWGN and Rayleigh flat fading.

The channel acts per complex symbol as y = h * x + w. Fading is flat and
block-constant: one coefficient h per sentence transmission (AWGN fixes
h = 1). Noise w is circular complex Gaussian with total variance
sigma2 = 10^(-snr_db / 10) relative to unit transmit power, split evenly
between the real and imaginary components.

All randomness comes from counter-based Philox streams (numpy Generator,
normals via its ziggurat sampler), so a (seed, route) pair pins the
realization exactly regardless of call order elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericsError, ShapeError
from .seeding import rng_stream

AWGN = "awgn"
RAYLEIGH = "rayleigh"
MIN_FADE_MAGNITUDE = 1e-12


@dataclass(frozen=True)
class ChannelSignal:
    """A sentence's worth of complex channel symbols, k per latent step."""

    symbols: np.ndarray
    k: int

    def __post_init__(self):
        arr = np.asarray(self.symbols, dtype=np.complex128)
        if arr.ndim != 1 or arr.size == 0:
            raise ShapeError(f"symbols must be a non-empty 1-D sequence, got shape {arr.shape}")
        if self.k < 1 or arr.size % self.k:
            raise ShapeError(f"{arr.size} symbols not divisible by k={self.k}")
        object.__setattr__(self, "symbols", arr)

    @property
    def mean_power(self) -> float:
        return float(np.mean(np.abs(self.symbols) ** 2))

    def check_unit_power(self, tol: float = 1e-9) -> None:
        if abs(self.mean_power - 1.0) > tol:
            raise NumericsError(f"transmit power {self.mean_power} is not unit within {tol}")


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of the channel: fading coefficient, noise variance, seed."""

    kind: str
    snr_db: float
    seed: int
    route: tuple = ()
    h: complex = field(default=1 + 0j)
    noiseless: bool = False  # test mode: force sigma2 = 0

    def __post_init__(self):
        if self.kind not in (AWGN, RAYLEIGH):
            raise ShapeError(f"unknown channel kind {self.kind!r}")
        if not np.isfinite(self.snr_db):
            raise NumericsError(f"snr_db must be finite, got {self.snr_db}")
        if self.kind == AWGN and self.h != 1 + 0j:
            raise ShapeError("AWGN fixes h = 1")

    @property
    def sigma2(self) -> float:
        return 0.0 if self.noiseless else 10.0 ** (-self.snr_db / 10.0)


def draw_rayleigh(seed: int, *route: int) -> complex:
    """One block-fading coefficient: circular complex Gaussian, E|h|^2 = 1."""
    rng = rng_stream(seed, *route)
    re, im = rng.normal(size=2) / np.sqrt(2.0)
    return complex(re, im)


def realize(kind: str, snr_db: float, seed: int, *route: int) -> ChannelRealization:
    """Draw a channel realization for one sentence transmission.

    Rayleigh redraws h on the rare |h| below the equalizer floor, stepping
    the route so the retry stays deterministic.
    """
    if kind == AWGN:
        return ChannelRealization(AWGN, snr_db, seed, route)
    attempt = 0
    while True:
        h = draw_rayleigh(seed, *route, attempt)
        if abs(h) >= MIN_FADE_MAGNITUDE:
            return ChannelRealization(RAYLEIGH, snr_db, seed, route + (attempt,), h)
        attempt += 1


def draw_noise(n: int, sigma2: float, seed: int, *route: int) -> np.ndarray:
    """n circular complex Gaussian samples with per-component variance sigma2/2."""
    rng = rng_stream(seed, *route)
    scale = np.sqrt(sigma2 / 2.0)
    parts = rng.normal(scale=scale, size=(2, n)) if sigma2 > 0 else np.zeros((2, n))
    return parts[0] + 1j * parts[1]


def transmit(signal: ChannelSignal, real: ChannelRealization) -> ChannelSignal:
    """Push symbols through y = h*x + w. Same realization, same output."""
    noise = draw_noise(signal.symbols.size, real.sigma2, real.seed, *real.route)
    return ChannelSignal(real.h * signal.symbols + noise, signal.k)


def equalize(signal: ChannelSignal, real: ChannelRealization) -> ChannelSignal:
    """Perfect-CSI zero forcing: divide by the known fading coefficient."""
    if abs(real.h) < MIN_FADE_MAGNITUDE:
        raise NumericsError(f"fading coefficient {real.h} too small to invert")
    if real.h == 1 + 0j:
        return signal
    return ChannelSignal(signal.symbols / real.h, signal.k)


def send(signal: ChannelSignal, real: ChannelRealization, csi: bool = True) -> ChannelSignal:
    """Transmit and, when csi is set, equalize. The receiver-facing path."""
    y = transmit(signal, real)
    return equalize(y, real) if csi else y

"""Windowing of raw vibration recordings and FFT magnitude features.

The FFT here is a vectorised mixed-radix Cooley-Tukey transform. Small prime
factors are handled with dense DFT butterflies, large prime lengths with
Bluestein's chirp-z algorithm, so any length works (5000 = 2^3 * 5^4 is the
default window).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

# Prime factors up to this size use a dense p-point DFT; larger primes go
# through Bluestein.
_DENSE_PRIME_LIMIT = 64


class SignalError(ValueError):
    pass


@dataclass
class RawRecording:
    channels: np.ndarray  # [n_samples, n_channels]
    sample_rate_hz: float
    label: str
    source_id: str = ""
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim == 1:
            ch = ch[:, None]
        if ch.ndim != 2 or ch.shape[0] < 1 or ch.shape[1] < 1:
            raise SignalError(f"{self.source_id}: channels must be a non-empty [n_samples, n_channels] matrix")
        if not self.sample_rate_hz > 0:
            raise SignalError(f"{self.source_id}: sample_rate_hz must be positive")
        if not np.isfinite(ch).all():
            raise SignalError(f"{self.source_id}: non-finite sample")
        self.channels = ch

    @property
    def n_samples(self) -> int:
        return self.channels.shape[0]

    @property
    def n_channels(self) -> int:
        return self.channels.shape[1]


@dataclass
class SegmentWindow:
    samples: np.ndarray  # [window_len, n_channels]
    label: str
    source_id: str
    offset: int

    @property
    def window_len(self) -> int:
        return self.samples.shape[0]


@dataclass
class SpectralFeatureVector:
    values: np.ndarray
    label: str


def window_count(n_samples: int, window_len: int, hop: int) -> int:
    if window_len > n_samples:
        return 0
    return (n_samples - window_len) // hop + 1


def segment(rec: RawRecording, window_len: int, hop: int | None = None) -> list[SegmentWindow]:
    """Slice a recording into fixed-length windows starting every `hop` samples.

    The trailing remainder shorter than `window_len` is dropped. `hop`
    defaults to `window_len` (non-overlapping windows).
    """
    if hop is None:
        hop = window_len
    if window_len < 1 or hop < 1:
        raise SignalError("window_len and hop must be positive")
    if rec.n_samples < window_len:
        raise SignalError(
            f"recording too short: {rec.source_id!r} has {rec.n_samples} samples, window_len={window_len}"
        )
    n = window_count(rec.n_samples, window_len, hop)
    return [
        SegmentWindow(
            samples=rec.channels[i * hop:i * hop + window_len],
            label=rec.label,
            source_id=rec.source_id,
            offset=i * hop,
        )
        for i in range(n)
    ]


# -- FFT ---------------------------------------------------------------------

def _smallest_prime_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    p = 3
    while p * p <= n:
        if n % p == 0:
            return p
        p += 2
    return n


def _twiddle(n: int, a: np.ndarray) -> np.ndarray:
    # exp(-2*pi*i*a/n) with the exponent reduced mod n first to keep the
    # angle small and accurate.
    return np.exp(-2j * np.pi * (np.mod(a, n) / n))


def _dense_dft(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    k = np.arange(n)
    w = _twiddle(n, np.outer(k, k))
    return x @ w.T


def _bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    m = 1 << (2 * n - 2).bit_length()
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp exponent exact for large n
    chirp = np.exp(-1j * np.pi * (np.mod(k * k, 2 * n) / n))
    a = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    a[..., :n] = x * chirp
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:][::-1])
    conv = _ifft(_fft(a) * _fft(b))
    return conv[..., :n] * chirp


def _fft(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    p = _smallest_prime_factor(n)
    if p == n:
        return _dense_dft(x) if n <= _DENSE_PRIME_LIMIT else _bluestein(x)
    m = n // p
    # decimation in time: sub-sequence r holds x[r], x[r+p], x[r+2p], ...
    sub = np.swapaxes(x.reshape(x.shape[:-1] + (m, p)), -1, -2)
    y = _fft(sub)  # [..., p, m]
    r = np.arange(p)[:, None]
    k = np.arange(m)[None, :]
    z = y * _twiddle(n, r * k)
    wp = _twiddle(p, np.outer(np.arange(p), np.arange(p)))
    # X[q*m + k] = sum_r wp[q, r] * z[r, k]
    out = np.einsum("qr,...rk->...qk", wp, z)
    return out.reshape(x.shape[:-1] + (n,))


def _ifft(x: np.ndarray) -> np.ndarray:
    return np.conj(_fft(np.conj(x))) / x.shape[-1]


def fft(x: np.ndarray) -> np.ndarray:
    """Full complex DFT along the last axis, X_k = sum_t x_t exp(-2 pi i k t / N)."""
    x = np.asarray(x)
    if x.shape[-1] < 1:
        raise SignalError("invalid window length")
    return _fft(x.astype(np.complex128))


def _check_window(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 2 or n % 2:
        raise SignalError(f"invalid window length: {n}")
    if not np.isfinite(x).all():
        raise SignalError("non-finite sample")
    return x


def fft_magnitude(x: np.ndarray) -> np.ndarray:
    """|X_k| for k = 1 .. N/2 along the last axis (DC dropped, Nyquist kept).

    Accepts a single window of even length N or a batch with windows on the
    last axis; output has N/2 values per window.
    """
    x = _check_window(x)
    n = x.shape[-1]
    return np.abs(fft(x)[..., 1:n // 2 + 1])


def extract_spectral_features(w: SegmentWindow) -> SpectralFeatureVector:
    """Concatenate the per-channel magnitude spectra in channel order."""
    mags = fft_magnitude(w.samples.T)  # [n_channels, N/2]
    return SpectralFeatureVector(values=mags.reshape(-1), label=w.label)


def extract_feature_matrix(windows: list[SegmentWindow]) -> np.ndarray:
    """Batched `extract_spectral_features` over equal-length windows, one row per window."""
    if not windows:
        raise SignalError("no windows to extract")
    stack = np.stack([w.samples.T for w in windows])  # [n, n_channels, N]
    mags = fft_magnitude(stack)
    return mags.reshape(len(windows), -1)

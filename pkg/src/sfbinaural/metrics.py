"""Spectral comparison helpers shared by the design, verification and tests."""
from __future__ import annotations

import numpy as np


def fractional_octave_smooth(freqs, magnitude, fraction: int = 3) -> np.ndarray:
    """Power-average ``|magnitude|`` over a 1/``fraction``-octave window centred on each bin.

    Works along the last axis; DC is left untouched.
    """
    freqs = np.asarray(freqs, dtype=np.float64)
    mag2 = np.abs(np.asarray(magnitude)) ** 2
    out = np.empty_like(mag2, dtype=np.float64)
    half = 2.0 ** (1.0 / (2 * fraction))
    # cumulative sums make each window an O(1) lookup
    csum = np.concatenate([np.zeros(mag2.shape[:-1] + (1,)), np.cumsum(mag2, axis=-1)], axis=-1)
    lo = np.searchsorted(freqs, freqs / half, side="left")
    hi = np.searchsorted(freqs, freqs * half, side="right")
    lo = np.maximum(lo, 1)
    hi = np.maximum(hi, lo + 1)
    hi = np.minimum(hi, freqs.size)
    lo = np.minimum(lo, hi - 1)
    out[...] = (csum[..., hi] - csum[..., lo]) / (hi - lo)
    out[..., 0] = mag2[..., 0]
    return np.sqrt(out)


def to_db(x, floor: float = 1e-20):
    return 20 * np.log10(np.maximum(np.abs(x), floor))


def smoothed_error_db(freqs, truth, rendered, f_lo: float, f_hi: float, fraction: int = 3):
    """RMS over bins in [f_lo, f_hi] of the smoothed magnitude difference in dB."""
    freqs = np.asarray(freqs, dtype=np.float64)
    band = (freqs >= f_lo) & (freqs <= f_hi)
    if not np.any(band):
        raise ValueError(f"no bins between {f_lo} and {f_hi} Hz")
    err = to_db(fractional_octave_smooth(freqs, rendered, fraction)) - to_db(
        fractional_octave_smooth(freqs, truth, fraction))
    return float(np.sqrt(np.mean(err[..., band] ** 2)))


def broadband_energy(spectrum, n_fft: int) -> float:
    """Time-domain energy of a real signal from its half spectrum (Parseval)."""
    s = np.abs(np.asarray(spectrum)) ** 2
    w = np.full(s.shape[-1], 2.0)
    w[0] = 1.0
    if n_fft % 2 == 0:
        w[-1] = 1.0
    return float(np.sum(s * w) / n_fft)

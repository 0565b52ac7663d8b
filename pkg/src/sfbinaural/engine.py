"""Uniform-partitioned overlap-save MIMO convolution (L inputs -> 2 ears)."""
from __future__ import annotations

import math

import numpy as np
from scipy.io import wavfile


class EngineError(ValueError):
    pass


class ConvolverState:
    """Streaming convolver over an FIR bank of shape (n_out, n_in, taps).

    Each ``process`` call consumes one (n_in, B) block and returns the
    matching (n_out, B) output block; transforms are 2B long.
    """

    def __init__(self, fir: np.ndarray, block: int, latency: int = 0):
        fir = np.asarray(fir, dtype=np.float64)
        if fir.ndim != 3:
            raise EngineError("FIR bank must be (n_out, n_in, taps)")
        if block < 64 or block > 8192 or block & (block - 1):
            raise EngineError(f"block size must be a power of two in [64, 8192], got {block}")
        self.block = block
        self.latency = int(latency)
        self.n_out, self.n_in, self.taps = fir.shape
        self.n_parts = max(1, math.ceil(self.taps / block))
        padded = np.zeros((self.n_out, self.n_in, self.n_parts * block))
        padded[..., :self.taps] = fir
        segs = padded.reshape(self.n_out, self.n_in, self.n_parts, block).transpose(2, 0, 1, 3)
        self._H = np.fft.rfft(segs, n=2 * block, axis=-1)  # (P, n_out, n_in, B+1)
        self.reset()

    def reset(self) -> None:
        self._fdl = np.zeros((self.n_parts, self.n_in, self.block + 1), dtype=np.complex128)
        self._prev = np.zeros((self.n_in, self.block))
        self._head = 0
        self.samples_processed = 0

    def process(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_in, self.block):
            raise EngineError(f"expected an input block of shape {(self.n_in, self.block)}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise EngineError("input block contains NaN or Inf")
        X = np.fft.rfft(np.concatenate([self._prev, x], axis=1), axis=1)
        head = (self._head + 1) % self.n_parts
        fdl = self._fdl.copy()
        fdl[head] = X
        order = (head - np.arange(self.n_parts)) % self.n_parts
        Y = np.einsum("poik,pik->ok", self._H, fdl[order])
        out = np.fft.irfft(Y, n=2 * self.block, axis=1)[:, self.block:]
        # commit state only after everything above succeeded
        self._fdl, self._head, self._prev = fdl, head, x.copy()
        self.samples_processed += self.block
        return out


def convolver_new(renderer, block: int = 512) -> ConvolverState:
    """Convolver for a ``RendererMatrix`` (or a bare FIR bank)."""
    if hasattr(renderer, "fir"):
        return ConvolverState(renderer.fir, block, renderer.latency_samples)
    return ConvolverState(renderer, block)


def process(state: ConvolverState, block: np.ndarray) -> np.ndarray:
    return state.process(block)


def convolve_stream(state: ConvolverState, x: np.ndarray, n_out: int | None = None) -> np.ndarray:
    """Feed (n_in, T) through ``state`` block by block; returns (n_out_ch, n_out) samples."""
    x = np.asarray(x, dtype=np.float64)
    B = state.block
    total = x.shape[1] if n_out is None else n_out
    n_blocks = math.ceil(total / B)
    buf = np.zeros((x.shape[0], n_blocks * B))
    m = min(x.shape[1], n_blocks * B)
    buf[:, :m] = x[:, :m]
    out = np.empty((state.n_out, n_blocks * B))
    for b in range(n_blocks):
        out[:, b * B:(b + 1) * B] = state.process(buf[:, b * B:(b + 1) * B])
    return out[:, :total]


def render_offline(renderer, signals, block: int = 512, force: bool = False) -> np.ndarray:
    """Render node signals to (2, T + taps - 1) ear signals."""
    renderer.check_grid(signals.grid.fingerprint(), force)
    x = signals.to_time().stacked()
    if x.shape[0] != renderer.n_inputs:
        raise EngineError(f"renderer expects {renderer.n_inputs} channels ({renderer.input_layout}), "
                          f"signals provide {x.shape[0]}")
    state = convolver_new(renderer, block)
    return convolve_stream(state, x, x.shape[1] + renderer.taps - 1)


def direct_convolution(fir: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Brute-force reference: sum over inputs of full linear convolutions."""
    n_out, n_in, taps = fir.shape
    out = np.zeros((n_out, x.shape[1] + taps - 1))
    for o in range(n_out):
        for i in range(n_in):
            out[o] += np.convolve(x[i], fir[o, i])
    return out


def write_wav(path, data: np.ndarray, sample_rate: float) -> None:
    """Stereo float32 RIFF/WAVE."""
    wavfile.write(path, int(round(sample_rate)), np.ascontiguousarray(np.asarray(data).T, dtype=np.float32))

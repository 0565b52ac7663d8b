"""Reference data: SDM responses, their binaural rendering, node-signal synthesis and a shoebox generator."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .fields import NodeSignals, default_predelay
from .grids import SPEED_OF_SOUND, SamplingGrid
from .hrtf import HrtfSet
from .sht import _geometry, real_sh, spherical_jn

SDM_FORMAT_VERSION = 1
SDM_MAGIC = b"SFBSDM\x00\x00"
EVENT_THRESHOLD = 1e-6


class GroundTruthError(ValueError):
    pass


@dataclass
class SdmResponse:
    """Pressure impulse response with one incidence direction per sample."""

    h: np.ndarray  # (T,)
    directions: np.ndarray  # (T, 3); rows with h == 0 are ignored
    sample_rate: float

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64).ravel()
        self.directions = np.asarray(self.directions, dtype=np.float64).reshape(-1, 3)
        if self.directions.shape[0] != self.h.size:
            raise GroundTruthError("need one direction per sample")
        if not np.all(np.isfinite(self.h)):
            raise GroundTruthError("impulse response must be finite")
        active = self.h != 0
        norms = np.linalg.norm(self.directions[active], axis=1)
        if np.any(np.abs(norms - 1) > 1e-9):
            raise GroundTruthError("directions of nonzero samples must be unit vectors")

    @property
    def length(self) -> int:
        return self.h.size

    def events(self, threshold: float = EVENT_THRESHOLD) -> np.ndarray:
        """Sample indices with ``|h| >= threshold * max|h|``."""
        peak = np.max(np.abs(self.h)) if self.h.size else 0.0
        if peak == 0:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(np.abs(self.h) >= threshold * peak)


def write_sdm(path, r: SdmResponse) -> None:
    """Magic, u32 header length, JSON header, raw <f8 h, raw <f8 (T, 3) directions."""
    header = json.dumps({"format_version": SDM_FORMAT_VERSION, "sample_rate": r.sample_rate,
                         "length": r.length}).encode()
    with open(path, "wb") as fh:
        fh.write(SDM_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(r.h.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(r.directions, dtype="<f8").tobytes())


def read_sdm(path) -> SdmResponse:
    raw = Path(path).read_bytes()
    if raw[:8] != SDM_MAGIC:
        raise GroundTruthError(f"{path}: not an SDM response file")
    (n,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + n])
    except json.JSONDecodeError as exc:
        raise GroundTruthError(f"{path}: corrupt header") from exc
    T = int(header["length"])
    body = raw[12 + n:]
    if len(body) != 8 * T * 4:
        raise GroundTruthError(f"{path}: expected {32 * T} payload bytes, found {len(body)}")
    h = np.frombuffer(body[:8 * T], dtype="<f8").copy()
    u = np.frombuffer(body[8 * T:], dtype="<f8").reshape(T, 3).copy()
    return SdmResponse(h, u, float(header["sample_rate"]))


# ------------------------------------------------------------ binaural truth

def brir_from_sdm(r: SdmResponse, hrtf: HrtfSet) -> np.ndarray:
    """(2, T + M - 1) binaural response: each sample places its nearest HRTF pair."""
    if abs(r.sample_rate - hrtf.sample_rate) > 1e-9:
        raise GroundTruthError(f"sample-rate mismatch: SDM {r.sample_rate} Hz, HRTF {hrtf.sample_rate} Hz")
    idx = np.zeros(r.length, dtype=np.int64)
    active = r.h != 0
    if np.any(active):
        idx[active] = hrtf.nearest(r.directions[active])
    return _kernels.sdm_overlap_add(r.h, idx, hrtf.irs())


# --------------------------------------------------------------- node truth

def truncation_order(kr) -> np.ndarray:
    """Order beyond which the plane-wave expansion tail at argument ``kr`` is below ~1e-14."""
    kr = np.asarray(kr, dtype=np.float64)
    return np.ceil(kr + 8 * np.cbrt(kr) + 8).astype(int)


def field_from_sdm(r: SdmResponse, grid: SamplingGrid, length: int | None = None,
                   predelay_samples: int | None = None, c: float = SPEED_OF_SOUND,
                   threshold: float = EVENT_THRESHOLD, chunk: int = 128) -> NodeSignals:
    """Node signals of the plane-wave superposition described by ``r``.

    The events are gathered per SH channel with one FFT over time
    (``A_nm(w) = 4 pi i**n sum_t h_t Y_nm(u_t) exp(-i w t)``) and evaluated at
    the nodes through the mode responses, truncated per bin where the
    expansion has converged. The Nyquist bin is dropped, as in
    ``plane_wave_ir``.
    """
    fs = r.sample_rate
    if predelay_samples is None:
        predelay_samples = default_predelay(grid, fs, c)
    if length is None:
        length = r.length + 2 * predelay_samples
        length += length % 2
    if length < 2 * predelay_samples or length < r.length:
        raise GroundTruthError(f"length {length} too short for the response and predelay")
    K = length // 2 + 1
    freqs = np.fft.rfftfreq(length, 1.0 / fs)
    ks = 2 * math.pi * freqs / c
    rmax = float(np.max(np.linalg.norm(grid.nodes, axis=1)))
    orders = truncation_order(ks * rmax)
    nmax = int(orders.max())

    ev = r.events(threshold)
    L = grid.n_nodes
    P = np.zeros((L, K), dtype=np.complex128)
    G = np.zeros((L, K), dtype=np.complex128) if grid.has_gradient else None
    if ev.size:
        Yev = real_sh(nmax, r.directions[ev])  # (E, C)
        geom = _geometry(grid, nmax)
        # per order: spectra of the weighted event sequences, kept only where needed
        A = []
        for n in range(nmax + 1):
            sl = slice(n * n, (n + 1) ** 2)
            first = int(np.searchsorted(orders, n))  # orders is nondecreasing in k
            x = np.zeros((length, 2 * n + 1))
            x[ev] = r.h[ev, None] * Yev[:, sl]
            spec = np.fft.rfft(x, axis=0)[first:] * (4 * math.pi * (1j ** n))
            A.append((first, spec))
        r_nodes = geom.r
        for k0 in range(0, K, chunk):
            k1 = min(K, k0 + chunk)
            ntop = int(orders[k1 - 1])
            kk = ks[k0:k1]
            kr = r_nodes[:, None] * kk[None, :]  # (L, Kc)
            if G is not None:
                j, dj = spherical_jn(ntop, kr, derivative=True)
            else:
                j = spherical_jn(ntop, kr)
            for n in range(ntop + 1):
                first, spec = A[n]
                lo = max(k0, first)
                if lo >= k1:
                    continue
                sl = slice(n * n, (n + 1) ** 2)
                a = spec[lo - first:k1 - first].T  # (2n+1, Kc')
                cols = slice(lo - k0, k1 - k0)
                proj = geom.Y[:, sl] @ a  # (L, Kc')
                P[:, lo:k1] += j[n][:, cols] * proj
                if G is not None:
                    tang = geom.tangential[:, sl] @ a
                    with np.errstate(divide="ignore", invalid="ignore"):
                        j_over_r = np.where(r_nodes[:, None] > 0, j[n][:, cols] / np.where(
                            r_nodes > 0, r_nodes, 1.0)[:, None], 0.0)
                    G[:, lo:k1] += (kk[None, lo - k0:k1 - k0] * dj[n][:, cols] * geom.radial[:, None]) * proj \
                        + j_over_r * tang
    shift = np.exp(-2j * math.pi * freqs * predelay_samples / fs)
    P *= shift[None, :]
    if G is not None:
        G *= shift[None, :]
        G[:, 0] = 0.0
    if length % 2 == 0:
        P[:, -1] = 0.0
        if G is not None:
            G[:, -1] = 0.0
    return NodeSignals(grid, fs, P, G, int(predelay_samples), "frequency", length, c).to_time()


# ----------------------------------------------------------------- shoebox

def sabine_t60(room, absorption: float, c: float = SPEED_OF_SOUND) -> float:
    lx, ly, lz = room
    V = lx * ly * lz
    S = 2 * (lx * ly + lx * lz + ly * lz)
    return 24 * math.log(10) * V / (c * S * absorption)


def sabine_absorption(room, t60: float, c: float = SPEED_OF_SOUND) -> float:
    """Uniform absorption that gives ``t60`` by Sabine's formula."""
    return sabine_t60(room, 1.0, c) / t60


def schroeder_t60(h, sample_rate: float, lo_db: float = -5.0, hi_db: float = -35.0) -> float:
    """T60 extrapolated from a line fit to the backward-integrated decay between ``lo_db`` and ``hi_db``."""
    e = np.cumsum(np.asarray(h, dtype=np.float64)[::-1] ** 2)[::-1]
    if e[0] <= 0:
        raise GroundTruthError("empty response")
    edc = 10 * np.log10(np.maximum(e / e[0], 1e-300))
    sel = (edc <= lo_db) & (edc >= hi_db)
    if np.count_nonzero(sel) < 2:
        raise GroundTruthError("decay range not covered by the response")
    t = np.flatnonzero(sel) / sample_rate
    slope, _ = np.polyfit(t, edc[sel], 1)
    return -60.0 / slope


def synth_shoebox(room, source, receiver, absorption, order: int, sample_rate: float = 48000.0,
                  length: int | None = None, c: float = SPEED_OF_SOUND) -> SdmResponse:
    """Image-source SDM response of a rectangular room.

    ``absorption`` is a scalar or six wall values (x0, x1, y0, y1, z0, z1);
    reflection factors are ``sqrt(1 - alpha)``. Arrivals landing on the same
    sample add their amplitudes and keep the direction of the strongest one.
    """
    room = np.asarray(room, dtype=np.float64)
    src = np.asarray(source, dtype=np.float64)
    rcv = np.asarray(receiver, dtype=np.float64)
    if room.shape != (3,) or np.any(room <= 0):
        raise GroundTruthError("room dimensions must be three positive lengths")
    for name, p in (("source", src), ("receiver", rcv)):
        if p.shape != (3,) or np.any(p <= 0) or np.any(p >= room):
            raise GroundTruthError(f"{name} must lie strictly inside the room")
    alpha = np.broadcast_to(np.asarray(absorption, dtype=np.float64), (6,))
    if np.any(alpha <= 0) or np.any(alpha > 1):
        raise GroundTruthError("absorption must lie in (0, 1]")
    if order < 0:
        raise GroundTruthError("reflection order must be nonnegative")
    beta = np.sqrt(1.0 - alpha)
    max_dist = np.inf if length is None else (length - 1) * c / sample_rate
    if not np.isfinite(max_dist):
        max_dist = float(np.linalg.norm(room)) * (order + 3)
    dist, amp, vec = _kernels.image_sources(room, src, rcv, beta, int(order), float(max_dist))
    keep = amp != 0
    dist, amp, vec = dist[keep], amp[keep], vec[keep]
    if np.any(dist <= 0):
        raise GroundTruthError("source and receiver coincide")
    t = np.rint(dist / c * sample_rate).astype(np.int64)
    if length is None:
        length = int(t.max()) + 1
    ok = t < length
    t, amp, vec, dist = t[ok], amp[ok], vec[ok], dist[ok]
    h = np.zeros(length)
    np.add.at(h, t, amp)
    u = np.zeros((length, 3))
    # strongest arrival per sample sets the direction
    order_idx = np.lexsort((-np.abs(amp), t))
    first = np.ones(order_idx.size, dtype=bool)
    first[1:] = t[order_idx][1:] != t[order_idx][:-1]
    win = order_idx[first]
    u[t[win]] = vec[win] / dist[win, None]
    return SdmResponse(h, u, sample_rate)

"""Renderer design: ambisonic (decompose, EQ, binaural decode) and direct (end-to-end LS / eMagLS).

A renderer maps node signals to two ear signals. It is stored as per-bin
complex matrices ``bins`` of shape (K, 2, n_in) and the FIR bank realising
them, ``fir`` of shape (2, n_in, taps). For surface grids the input holds
pressure channels followed by gradient channels; the cardioid weight
``c / (i w)`` is folded into the gradient half of the matrices.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.linalg import blas

from ._version import __version__
from .grids import SPEED_OF_SOUND, SamplingGrid, aliasing_frequency, default_max_order
from .hrtf import HrtfSet, HrtfSh, fibonacci_directions
from .metrics import fractional_octave_smooth
from .sht import (_RANK_EPS, DEFAULT_REG, DecompositionMatrix, RegProfile, ShSignal, clamp_singular_values,
                  n_channels)

RENDERER_FORMAT_VERSION = 1
RENDERER_MAGIC = b"SFBRNDR\x00"
DEFAULT_TAPS = 2048
DEFAULT_TRAINING = 2702
EQ_LIMIT_DB = 12.0
ALIASING_LIMIT = 1e-4
# The direct route inverts the node responses themselves; with 60 dB of range the
# weak node-space directions get up to 1000x gain, change from bin to bin and
# leave a broadband floor in the FIRs. 40 dB keeps 2048 taps free of time aliasing.
DEFAULT_DIRECT_REG = RegProfile(((200.0, 20.0), (2000.0, 40.0)))


class RendererError(ValueError):
    pass


class FingerprintMismatch(RendererError):
    def __init__(self, expected, found):
        super().__init__(f"grid fingerprint mismatch: renderer expects {expected}, input has {found}")
        self.expected = expected
        self.found = found


class TimeAliasingError(RendererError):
    pass


# ------------------------------------------------------------------ helpers

def cardioid_weights(freqs, c: float = SPEED_OF_SOUND) -> np.ndarray:
    """``c / (i w)`` per bin, 0 at DC."""
    w = 2 * math.pi * np.asarray(freqs, dtype=np.float64)
    out = np.zeros(w.shape, dtype=np.complex128)
    nz = w != 0
    out[nz] = c / (1j * w[nz])
    return out


def plane_wave_node_response(grid: SamplingGrid, freq: float, dirs, c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Combined node response (L, Q) to unit plane waves from ``dirs`` (no predelay).

    For surface grids this is ``p (1 + u.n)``, the cardioid combination of a
    plane wave; at DC the gradient term is dropped.
    """
    dirs = np.atleast_2d(dirs)
    k = 2 * math.pi * freq / c
    P = np.exp(1j * k * (grid.nodes @ dirs.T))
    if grid.has_gradient and freq > 0:
        P *= 1.0 + grid.normals @ dirs.T
    return P


def plane_wave_node_responses(grid: SamplingGrid, freqs, dirs, c: float = SPEED_OF_SOUND, resync: int = 32):
    """Yield ``plane_wave_node_response`` for each of the uniformly spaced ``freqs``.

    Consecutive bins differ by a fixed phase step, so most bins cost one
    complex multiply instead of an exponential; the phase is recomputed
    exactly every ``resync`` bins.
    """
    dirs = np.atleast_2d(dirs)
    freqs = np.asarray(freqs, dtype=np.float64)
    delay = (grid.nodes @ dirs.T) * (2 * math.pi / c)
    card = 1.0 + grid.normals @ dirs.T if grid.has_gradient else None
    step = np.exp(1j * delay * (freqs[1] - freqs[0])) if freqs.size > 1 else None
    E = None
    for i, f in enumerate(freqs):
        if E is None or i % resync == 0:
            E = np.exp(1j * delay * f)
        else:
            E = E * step
        yield E * card if (card is not None and f > 0) else E


def expand_inputs(W: np.ndarray, grid_has_gradient: bool, freqs, c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Turn combined-signal matrices (K, 2, L) into raw-channel matrices (K, 2, n_in)."""
    if not grid_has_gradient:
        return W
    g = cardioid_weights(freqs, c)
    return np.concatenate([W, W * g[:, None, None]], axis=2)


# --------------------------------------------------------------------- FIR

def aliasing_metric(h: np.ndarray, taps: int) -> float:
    """Share of impulse-response energy outside the first 90% of ``taps``."""
    total = float(np.sum(h**2))
    if total == 0:
        return 0.0
    start = taps - max(1, taps // 10)
    return float(np.sum(h[..., start:] ** 2)) / total


def renderer_to_fir(bins: np.ndarray, taps: int, latency: int, n_fft: int | None = None,
                    check: bool = True) -> np.ndarray:
    """Per-entry inverse transform with a ``latency``-sample shift and a raised-cosine tail.

    ``bins`` has shape (K, ...) on an rfft grid of ``n_fft`` points
    (default ``2 (K - 1)``). Returns the FIR bank with the bin axis moved
    last, i.e. (..., taps). The last 10% of taps are faded out; if more than
    ``ALIASING_LIMIT`` of the energy sits there (or past ``taps``) a
    ``TimeAliasingError`` is raised.
    """
    bins = np.asarray(bins)
    K = bins.shape[0]
    n_fft = n_fft or 2 * (K - 1)
    if n_fft // 2 + 1 != K:
        raise RendererError(f"{K} bins do not match n_fft={n_fft}")
    if taps < 1 or latency < 0 or latency >= taps:
        raise RendererError(f"need 0 <= latency < taps (latency {latency}, taps {taps})")
    freqs = np.arange(K) / n_fft
    shift = np.exp(-2j * math.pi * freqs * latency)
    shifted = np.moveaxis(bins * shift.reshape((K,) + (1,) * (bins.ndim - 1)), 0, -1)
    h = np.fft.irfft(shifted, n=n_fft, axis=-1)
    if n_fft >= taps:
        kept, lost = h[..., :taps], h[..., taps:]
    else:
        kept = np.concatenate([h, np.zeros(h.shape[:-1] + (taps - n_fft,))], axis=-1)
        lost = h[..., :0]
    total = float(np.sum(h**2))
    if check and total > 0:
        metric = aliasing_metric(kept, taps) * float(np.sum(kept**2)) / total + float(np.sum(lost**2)) / total
        if metric > ALIASING_LIMIT:
            raise TimeAliasingError(
                f"time-aliasing metric {metric:.2e} exceeds {ALIASING_LIMIT:g}; use more taps or less latency")
    n_win = max(1, taps // 10)
    win = 0.5 * (1 + np.cos(np.pi * (np.arange(n_win) + 1) / n_win))
    out = kept.copy()
    out[..., taps - n_win:] *= win
    return out


# -------------------------------------------------------------- EQ filter

@dataclass
class EqFilter:
    """Single minimum-phase FIR applied to both ears."""

    fir: np.ndarray
    freqs: np.ndarray
    target_db: np.ndarray  # smoothed and clamped design gain per bin
    sample_rate: float

    def response(self, n_fft: int) -> np.ndarray:
        return np.fft.rfft(self.fir, n=n_fft)

    @classmethod
    def identity(cls, freqs, sample_rate, taps=1):
        fir = np.zeros(taps)
        fir[0] = 1.0
        return cls(fir, np.asarray(freqs), np.zeros(len(freqs)), sample_rate)


def eq_target_gain(freqs, truth_rms, rendered_rms, limit_db: float = EQ_LIMIT_DB, fraction: int = 3):
    """EQ gain in dB: smoothed truth/rendered magnitude ratio clamped to +-``limit_db``.

    Bins whose rendered level is below 1e-12 get the full boost.
    """
    t = fractional_octave_smooth(freqs, truth_rms, fraction)
    r = fractional_octave_smooth(freqs, rendered_rms, fraction)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = 20 * np.log10(np.where(r > 1e-12, t / np.where(r > 1e-12, r, 1.0), np.inf))
    g = np.where(np.isnan(g), 0.0, g)
    return np.clip(g, -limit_db, limit_db)


def minimum_phase_fir(freqs, gain_db, taps: int, oversample: int = 8) -> np.ndarray:
    """Real-cepstrum minimum-phase FIR with the given magnitude (dB on an rfft grid)."""
    freqs = np.asarray(freqs, dtype=np.float64)
    n = max(2 * (freqs.size - 1), taps) * oversample
    n += n % 2
    fine = np.linspace(0, freqs[-1], n // 2 + 1)
    logmag = np.interp(fine, freqs, np.asarray(gain_db, dtype=np.float64)) * (math.log(10) / 20)
    cep = np.fft.irfft(logmag, n=n)
    fold = np.zeros(n)
    fold[0] = cep[0]
    fold[1:n // 2] = 2 * cep[1:n // 2]
    fold[n // 2] = cep[n // 2]
    h = np.fft.irfft(np.exp(np.fft.rfft(fold)), n=n)
    return h[:taps]




def design_eq_filter(grid: SamplingGrid, order: int, D: DecompositionMatrix, hrtf_sh: HrtfSh,
                     training_dirs=None, taps: int = DEFAULT_TAPS, hrtf: HrtfSet | None = None,
                     limit_db: float = EQ_LIMIT_DB, fraction: int = 3) -> EqFilter:
    """Global EQ from plane-wave stimuli: amplitude-RMS over directions and ears of
    ground truth over the rendered (un-equalised) ambisonic response.

    Ground truth is the HRTF set entry nearest each training direction when
    ``hrtf`` is given, otherwise the SH re-synthesis of ``hrtf_sh``.
    """
    _check_ambisonic_inputs(order, D, hrtf_sh)
    if training_dirs is None:
        training_dirs = fibonacci_directions(max(DEFAULT_TRAINING, 2 * n_channels(order)))
    dirs = np.atleast_2d(np.asarray(training_dirs, dtype=np.float64))
    if dirs.shape[0] < 2 * n_channels(order):
        raise RendererError(f"EQ design at order {order} needs >= {2 * n_channels(order)} training directions")
    dec = np.transpose(hrtf_sh.decode_weights(), (0, 2, 1))
    if hrtf is not None:
        truth_all = hrtf.spectra(hrtf_sh.n_fft)[:, hrtf.nearest(dirs), :]  # (K, Q, 2)
    else:
        truth_all = hrtf_sh.synthesize(dirs)
    K = D.freqs.size
    t_rms = np.sqrt(np.mean(np.abs(truth_all) ** 2, axis=(1, 2)))
    r_rms = np.empty(K)
    for k, S in enumerate(plane_wave_node_responses(grid, D.freqs, dirs, D.c)):
        ears = (dec[k] @ D.matrices[k]) @ S
        r_rms[k] = np.sqrt(np.mean(np.abs(ears) ** 2))
    gain = eq_target_gain(D.freqs, t_rms, r_rms, limit_db, fraction)
    fir = minimum_phase_fir(D.freqs, gain, taps)
    return EqFilter(fir, D.freqs.copy(), gain, hrtf_sh.sample_rate)


# ------------------------------------------------------------------ rotation

def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Right-handed ``Rz(yaw) @ Ry(pitch) @ Rx(roll)`` (radians)."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1.0]])
    Ry = np.array([[cp, 0, sp], [0, 1.0, 0], [-sp, 0, cp]])
    Rx = np.array([[1.0, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return Rz @ Ry @ Rx


def _P(i, l, a, b, R1, Rp):
    ri1, rim1, ri0 = R1[i + 1, 2], R1[i + 1, 0], R1[i + 1, 1]
    if b == -l:
        return ri1 * Rp[a + l - 1, 0] + rim1 * Rp[a + l - 1, 2 * l - 2]
    if b == l:
        return ri1 * Rp[a + l - 1, 2 * l - 2] - rim1 * Rp[a + l - 1, 0]
    return ri0 * Rp[a + l - 1, b + l - 1]


def sh_rotation(order: int, R: np.ndarray) -> np.ndarray:
    """Block-diagonal real-SH rotation ``M`` with ``Y(R u) = M Y(u)`` (ACN).

    Built order by order with the Ivanic-Ruedenberg recurrence.
    """
    C = n_channels(order)
    M = np.zeros((C, C))
    M[0, 0] = 1.0
    if order == 0:
        return M
    # order-1 block in (y, z, x) ordering
    perm = [1, 2, 0]
    R1 = R[np.ix_(perm, perm)]
    M[1:4, 1:4] = R1
    Rp = R1
    for l in range(2, order + 1):
        Rl = np.zeros((2 * l + 1, 2 * l + 1))
        for m in range(-l, l + 1):
            am = abs(m)
            d = 1.0 if m == 0 else 0.0
            for n in range(-l, l + 1):
                denom = (2 * l) * (2 * l - 1) if abs(n) == l else l * l - n * n
                u = math.sqrt((l * l - m * m) / denom)
                v = math.sqrt((1 + d) * (l + am - 1) * (l + am) / denom) * (1 - 2 * d) * 0.5
                w = math.sqrt(max(0, (l - am - 1) * (l - am)) / denom) * (1 - d) * -0.5
                val = 0.0
                if u:
                    val += u * _P(0, l, m, n, R1, Rp)
                if v:
                    if m == 0:
                        vv = _P(1, l, 1, n, R1, Rp) + _P(-1, l, -1, n, R1, Rp)
                    elif m > 0:
                        dd = 1.0 if m == 1 else 0.0
                        vv = _P(1, l, m - 1, n, R1, Rp) * math.sqrt(1 + dd) - _P(-1, l, -m + 1, n, R1, Rp) * (1 - dd)
                    else:
                        dd = 1.0 if m == -1 else 0.0
                        vv = _P(1, l, m + 1, n, R1, Rp) * (1 - dd) + _P(-1, l, -m - 1, n, R1, Rp) * math.sqrt(1 + dd)
                    val += v * vv
                if w:
                    if m > 0:
                        ww = _P(1, l, m + 1, n, R1, Rp) + _P(-1, l, -m - 1, n, R1, Rp)
                    else:
                        ww = _P(1, l, m - 1, n, R1, Rp) - _P(-1, l, -m + 1, n, R1, Rp)
                    val += w * ww
                Rl[m + l, n + l] = val
        s = l * l
        M[s:s + 2 * l + 1, s:s + 2 * l + 1] = Rl
        Rp = Rl
    return M


def rotate_sh(a: ShSignal, yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0) -> ShSignal:
    """Rotate the sound scene: a plane wave from ``u`` ends up arriving from ``R u``."""
    M = sh_rotation(a.order, rotation_matrix(yaw, pitch, roll))
    return ShSignal(a.order, M @ a.data, a.sample_rate, a.domain, a.ordering, a.normalization)


# ------------------------------------------------------------------ designs

@dataclass
class RendererMatrix:
    kind: str  # "ambisonic" | "direct"
    grid_fingerprint: str
    input_layout: str  # "pressure" | "pressure+gradient"
    sample_rate: float
    n_fft: int
    bins: np.ndarray  # (K, 2, n_in)
    fir: np.ndarray  # (2, n_in, taps)
    latency_samples: int
    metadata: dict = field(default_factory=dict)
    decoder: np.ndarray | None = None  # ambisonic only: (K, 2, C), EQ included
    decomposition: np.ndarray | None = None  # ambisonic only: (K, C, L)
    order: int | None = None

    @property
    def n_inputs(self) -> int:
        return self.bins.shape[2]

    @property
    def taps(self) -> int:
        return self.fir.shape[2]

    @property
    def freqs(self) -> np.ndarray:
        return np.fft.rfftfreq(self.n_fft, 1.0 / self.sample_rate)

    def check_grid(self, fingerprint: str, force: bool = False) -> None:
        if fingerprint != self.grid_fingerprint and not force:
            raise FingerprintMismatch(self.grid_fingerprint, fingerprint)

    def rotated(self, yaw=0.0, pitch=0.0, roll=0.0) -> "RendererMatrix":
        """Ambisonic renderer with a scene rotation inserted before the decode."""
        if self.kind != "ambisonic":
            raise RendererError("rotation is only available for ambisonic renderers")
        if self.decoder is None or self.decomposition is None:
            raise RendererError("this ambisonic renderer was stored without rotation data")
        if yaw == 0 and pitch == 0 and roll == 0:
            return self
        M = sh_rotation(self.order, rotation_matrix(yaw, pitch, roll))
        dec = self.decoder @ M
        W = np.einsum("koc,kcl->kol", dec, self.decomposition)
        bins = expand_inputs(W, self.input_layout == "pressure+gradient", self.freqs,
                             self.metadata.get("speed_of_sound", SPEED_OF_SOUND))
        fir = renderer_to_fir(bins, self.taps, self.latency_samples, self.n_fft)
        meta = dict(self.metadata, rotation_deg=[math.degrees(x) for x in (yaw, pitch, roll)])
        return RendererMatrix(self.kind, self.grid_fingerprint, self.input_layout, self.sample_rate, self.n_fft,
                              bins, fir, self.latency_samples, meta, dec, self.decomposition, self.order)


def _check_ambisonic_inputs(order, D, hrtf_sh):
    if D.order != order or hrtf_sh.order != order:
        raise RendererError(f"order mismatch: requested {order}, decomposition {D.order}, HRTF-SH {hrtf_sh.order}")
    if D.freqs.size != hrtf_sh.freqs.size or not np.allclose(D.freqs, hrtf_sh.freqs):
        raise RendererError("decomposition and HRTF-SH use different frequency grids")


def _finish(bins_W, grid, kind, fs, n_fft, taps, latency, meta, c, **extra):
    taps = taps or n_fft
    latency = taps // 2 if latency is None else latency
    bins = expand_inputs(bins_W, grid.has_gradient, np.fft.rfftfreq(n_fft, 1.0 / fs), c)
    fir = renderer_to_fir(bins, taps, latency, n_fft)
    meta = dict(meta, taps=taps, latency_samples=latency, sample_rate=fs, n_fft=n_fft,
                speed_of_sound=c, grid_family=grid.family.short, n_nodes=grid.n_nodes,
                size_m=grid.size_m, software_version=__version__)
    layout = "pressure+gradient" if grid.has_gradient else "pressure"
    return RendererMatrix(kind, grid.fingerprint(), layout, fs, n_fft, bins, fir, latency, meta, **extra)


def design_ambisonic(grid: SamplingGrid, order: int, hrtf_sh: HrtfSh, D: DecompositionMatrix,
                     eq: EqFilter | None = None, taps: int | None = None,
                     latency: int | None = None) -> RendererMatrix:
    """Per bin ``W = h^T * EQ * D``: binaural decode after the SH decomposition."""
    _check_ambisonic_inputs(order, D, hrtf_sh)
    if D.grid_fingerprint != grid.fingerprint():
        raise RendererError("decomposition was designed for a different grid")
    n_fft = hrtf_sh.n_fft
    dec = np.transpose(hrtf_sh.decode_weights(), (0, 2, 1))  # (K, 2, C)
    eq_db = None
    if eq is not None:
        g = eq.response(n_fft)
        dec = dec * g[:, None, None]
        eq_db = eq.target_db
    W = np.einsum("koc,kcl->kol", dec, D.matrices)
    meta = {
        "order": order,
        "regularization": D.reg.to_dict(),
        "f_transition": hrtf_sh.f_transition,
        "hrtf_fingerprint": hrtf_sh.fingerprint,
        "eq_fir": None if eq is None else [float(x) for x in eq.fir],
        "eq_target_db": None if eq_db is None else [float(x) for x in eq_db],
        "aliasing_frequency": aliasing_frequency(order, grid.radius, D.c),
    }
    return _finish(W, grid, "ambisonic", hrtf_sh.sample_rate, n_fft, taps, latency, meta, D.c,
                   decoder=dec, decomposition=D.matrices, order=order)


def regularized_ls(P: np.ndarray, H: np.ndarray, dyn_range_db: float) -> np.ndarray:
    """``W`` minimising ``||W P - H||_F`` with the singular values of ``P`` floored.

    The eigen-decomposition of the Gram matrix ``P P^H`` (L x L) is cheaper
    than an SVD of the wide training matrix, but its small eigenvalues carry
    rounding noise of order ``eps * s_max**2``. Directions below the floor or
    below ``1e-3 s_max`` are therefore re-solved with a thin SVD of
    ``P^H U_low``.
    """
    P = np.ascontiguousarray(P, dtype=np.complex128)
    G = blas.zherk(1.0, P)  # upper triangle of P P^H
    lam, U = linalg.eigh(G, lower=False, driver="evr", check_finite=False)
    lam, U = lam[::-1], U[:, ::-1]
    smax = math.sqrt(max(lam[0], 0.0))
    if smax == 0:
        return np.zeros((H.shape[0], P.shape[0]), dtype=np.complex128)
    floor = smax * 10.0 ** (-dyn_range_db / 20.0)
    hi = lam >= max(floor, 1e-3 * smax) ** 2
    Uh = U[:, hi]
    W = ((H @ P.conj().T) @ Uh) / lam[hi][None, :] @ Uh.conj().T
    if not np.all(hi):
        Ul = U[:, ~hi]
        V, sl, Zh = np.linalg.svd(P.conj().T @ Ul, full_matrices=False)
        keep = sl > _RANK_EPS * smax
        # P restricted to the low subspace is (Ul Zh^H) diag(sl) V^H
        inv = 1.0 / (sl[keep] * np.maximum(sl[keep], floor))
        W += ((H @ P.conj().T) @ (Ul @ Zh[keep].conj().T)) * inv[None, :] @ (Ul @ Zh[keep].conj().T).conj().T
    return W


def design_direct(grid: SamplingGrid, hrtf: HrtfSet, training_dirs=None, f_transition: float | None = None,
                  reg: RegProfile = DEFAULT_DIRECT_REG, n_fft: int | None = None, taps: int | None = None,
                  latency: int | None = None, c: float = SPEED_OF_SOUND) -> RendererMatrix:
    """End-to-end regularised LS from node signals to ears; eMagLS (variant 2) above ``f_transition``."""
    taps = taps or DEFAULT_TAPS
    n_fft = n_fft or taps
    if training_dirs is None:
        training_dirs = fibonacci_directions(max(DEFAULT_TRAINING, 2 * grid.n_nodes))
    dirs = np.atleast_2d(np.asarray(training_dirs, dtype=np.float64))
    Q = dirs.shape[0]
    if Q < grid.n_nodes:
        raise RendererError(f"{Q} training directions cannot determine a {grid.n_nodes}-node renderer "
                            f"(rank deficient; use >= {2 * grid.n_nodes})")
    if f_transition is None:
        f_transition = aliasing_frequency(default_max_order(grid), grid.radius, c)
    fs = hrtf.sample_rate
    freqs = np.fft.rfftfreq(n_fft, 1.0 / fs)
    H = hrtf.spectra(n_fft)[:, hrtf.nearest(dirs), :]  # (K, Q, 2)
    dr = reg.dynamic_range_db(freqs)
    K = freqs.size
    W = np.empty((K, 2, grid.n_nodes), dtype=np.complex128)
    kind = []
    prev = None
    for k, P in enumerate(plane_wave_node_responses(grid, freqs, dirs, c)):
        target = H[k].T  # (2, Q)
        if freqs[k] >= f_transition and prev is not None:
            phase = np.angle(prev @ P)
            target = np.abs(target) * np.exp(1j * phase)
            kind.append("MagLS")
        else:
            kind.append("LS")
        W[k] = regularized_ls(P, target, dr[k])
        prev = W[k]
    meta = {
        "training_directions": Q,
        "f_transition": float(f_transition),
        "regularization": reg.to_dict(),
        "hrtf_fingerprint": hrtf.fingerprint(),
        "fit_kind": kind,
        "aliasing_frequency": float(f_transition),
    }
    return _finish(W, grid, "direct", fs, n_fft, taps, latency, meta, c)


# ---------------------------------------------------------------- container

def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def write_renderer(path, r: RendererMatrix) -> None:
    """Binary container: magic, u32 version, array payload, JSON trailer, u64 trailer length."""
    arrays = {"bins": r.bins.astype("<c16", copy=False), "fir": r.fir.astype("<f8", copy=False)}
    if r.decoder is not None:
        arrays["decoder"] = r.decoder.astype("<c16", copy=False)
        arrays["decomposition"] = r.decomposition.astype("<c16", copy=False)
    index, blobs, offset = {}, [], 0
    for name, arr in arrays.items():
        b = np.ascontiguousarray(arr).tobytes()
        index[name] = {"dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(b)}
        blobs.append(b)
        offset += len(b)
    payload = b"".join(blobs)
    header = {
        "format_version": RENDERER_FORMAT_VERSION,
        "kind": r.kind,
        "grid_fingerprint": r.grid_fingerprint,
        "input_layout": r.input_layout,
        "sample_rate": r.sample_rate,
        "n_fft": r.n_fft,
        "latency_samples": r.latency_samples,
        "order": r.order,
        "arrays": index,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "metadata": r.metadata,
    }
    trailer = json.dumps(header, sort_keys=True, default=_json_default).encode()
    with open(path, "wb") as fh:
        fh.write(RENDERER_MAGIC)
        fh.write(struct.pack("<I", RENDERER_FORMAT_VERSION))
        fh.write(payload)
        fh.write(trailer)
        fh.write(struct.pack("<Q", len(trailer)))


def read_renderer(path) -> RendererMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:8] != RENDERER_MAGIC:
        raise RendererError(f"{path}: not a renderer container")
    (version,) = struct.unpack("<I", raw[8:12])
    if version != RENDERER_FORMAT_VERSION:
        raise RendererError(f"{path}: unsupported renderer format version {version}")
    (tlen,) = struct.unpack("<Q", raw[-8:])
    if tlen + 20 > len(raw):
        raise RendererError(f"{path}: truncated container")
    try:
        header = json.loads(raw[-8 - tlen:-8])
    except json.JSONDecodeError as exc:
        raise RendererError(f"{path}: corrupt trailer: {exc}") from exc
    payload = raw[12:-8 - tlen]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise RendererError(f"{path}: payload checksum mismatch")
    arrs = {}
    for name, spec in header["arrays"].items():
        buf = payload[spec["offset"]:spec["offset"] + spec["nbytes"]]
        arrs[name] = np.frombuffer(buf, dtype=spec["dtype"]).reshape(spec["shape"]).copy()
    return RendererMatrix(header["kind"], header["grid_fingerprint"], header["input_layout"],
                          float(header["sample_rate"]), int(header["n_fft"]), arrs["bins"], arrs["fir"],
                          int(header["latency_samples"]), header.get("metadata", {}),
                          arrs.get("decoder"), arrs.get("decomposition"), header.get("order"))

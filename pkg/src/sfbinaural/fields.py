"""Node signals for analytic sound fields, and pressure-gradient helpers.

Sign conventions: kernel ``exp(-i k_pw . x)``, time dependence ``exp(+i w t)``
(which is what ``numpy.fft.irfft`` realises). A plane wave arriving *from*
unit vector ``u`` propagates along ``d = -u``, so the pressure at ``x`` is
``exp(+i w u.x / c)``: nodes closer to the source hear it earlier.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .grids import AIR_DENSITY, SPEED_OF_SOUND, SamplingGrid, read_grid, write_grid

NODE_FORMAT_VERSION = 1


class FieldError(ValueError):
    pass


class SpacingWarning(UserWarning):
    """Double-layer spacing too coarse for the requested bandwidth."""


@dataclass(frozen=True)
class PlaneWaveSpec:
    azimuth: float
    elevation: float = 0.0
    amplitude: float = 1.0

    @property
    def incidence(self) -> np.ndarray:
        """Unit vector pointing to where the sound comes from."""
        ce = math.cos(self.elevation)
        return np.array([ce * math.cos(self.azimuth), ce * math.sin(self.azimuth), math.sin(self.elevation)])

    @classmethod
    def from_vector(cls, u, amplitude=1.0):
        u = np.asarray(u, dtype=np.float64)
        n = np.linalg.norm(u)
        if abs(n - 1) > 1e-12:
            raise FieldError(f"incidence vector must have unit length (|u| = {n!r})")
        return cls(math.atan2(u[1], u[0]), math.asin(max(-1.0, min(1.0, u[2]))), amplitude)


@dataclass
class NodeSignals:
    grid: SamplingGrid
    sample_rate: float
    pressure: np.ndarray
    gradient: np.ndarray | None = None
    predelay_samples: int = 0
    domain: str = "time"
    length: int | None = None  # time-domain length; fixes the bin grid for spectra
    c: float = SPEED_OF_SOUND

    def __post_init__(self):
        L = self.grid.n_nodes
        if self.pressure.ndim != 2 or self.pressure.shape[0] != L:
            raise FieldError(f"pressure must have {L} channels, got shape {self.pressure.shape}")
        if self.grid.has_gradient:
            if self.gradient is not None and self.gradient.shape != self.pressure.shape:
                raise FieldError("gradient block must match the pressure block")
        elif self.gradient is not None:
            raise FieldError("volumetric grids carry no gradient channels")
        if self.domain not in ("time", "frequency"):
            raise FieldError(f"unknown domain {self.domain!r}")
        if self.domain == "time":
            if not np.all(np.isfinite(self.pressure)) or (
                    self.gradient is not None and not np.all(np.isfinite(self.gradient))):
                raise FieldError("time-domain node signals must be finite")
            self.length = self.pressure.shape[1]
        elif self.length is None:
            self.length = 2 * (self.pressure.shape[1] - 1)

    @property
    def n_fft(self) -> int:
        return int(self.length)

    @property
    def freqs(self) -> np.ndarray:
        return np.fft.rfftfreq(self.n_fft, 1.0 / self.sample_rate)

    @property
    def layout(self) -> str:
        return "pressure+gradient" if self.gradient is not None else "pressure"

    def stacked(self) -> np.ndarray:
        """Pressure channels followed by gradient channels."""
        if self.gradient is None:
            return self.pressure
        return np.concatenate([self.pressure, self.gradient], axis=0)

    def spectra(self, n_fft: int | None = None) -> "NodeSignals":
        if self.domain == "frequency":
            if n_fft is not None and n_fft != self.n_fft:
                return self.to_time().spectra(n_fft)
            return self
        n = n_fft or self.n_fft
        P = np.fft.rfft(self.pressure, n=n, axis=1)
        G = None if self.gradient is None else np.fft.rfft(self.gradient, n=n, axis=1)
        return replace(self, pressure=P, gradient=G, domain="frequency", length=n)

    def to_time(self) -> "NodeSignals":
        if self.domain == "time":
            return self
        n = self.n_fft
        P = np.fft.irfft(self.pressure, n=n, axis=1)
        G = None if self.gradient is None else np.fft.irfft(self.gradient, n=n, axis=1)
        return replace(self, pressure=P, gradient=G, domain="time", length=n)

    def __add__(self, other: "NodeSignals") -> "NodeSignals":
        if other.grid is not self.grid and other.grid.fingerprint() != self.grid.fingerprint():
            raise FieldError("cannot add signals on different grids")
        if other.domain != self.domain or other.pressure.shape != self.pressure.shape:
            raise FieldError("cannot add signals with different layouts")
        G = None
        if self.gradient is not None:
            G = self.gradient + other.gradient
        return replace(self, pressure=self.pressure + other.pressure, gradient=G)


def default_predelay(grid: SamplingGrid, sample_rate: float, c: float = SPEED_OF_SOUND) -> int:
    """Global delay (samples) that keeps every node arrival causal."""
    return int(math.ceil(sample_rate * (grid.size_m / 2 + 0.001) / c))


def _incidence(spec):
    u = spec.incidence if isinstance(spec, PlaneWaveSpec) else np.asarray(spec, dtype=np.float64)
    if abs(np.linalg.norm(u) - 1) > 1e-12:
        raise FieldError("incidence vector must have unit length")
    return u


def plane_wave_bins(spec: PlaneWaveSpec, grid: SamplingGrid, sample_rate: float, n_bins: int,
                    predelay_samples: int | None = None, c: float = SPEED_OF_SOUND,
                    n_fft: int | None = None) -> NodeSignals:
    """Half-spectra of a plane wave at the grid nodes (closed form at every bin)."""
    if n_bins < 2:
        raise FieldError("need at least 2 bins")
    u = _incidence(spec)
    amp = spec.amplitude if isinstance(spec, PlaneWaveSpec) else 1.0
    n_fft = n_fft or 2 * (n_bins - 1)
    if n_fft // 2 + 1 != n_bins:
        raise FieldError(f"n_fft={n_fft} does not give {n_bins} bins")
    if predelay_samples is None:
        predelay_samples = default_predelay(grid, sample_rate, c)
    omega = 2 * math.pi * np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    advance = grid.nodes @ u / c  # seconds earlier than at the origin
    tau0 = predelay_samples / sample_rate
    P = amp * np.exp(1j * omega[None, :] * (advance[:, None] - tau0))
    P[:, 0] = amp
    G = None
    if grid.has_gradient:
        un = grid.normals @ u
        # dp/dn = -i |k| (d.n) p with d = -u
        G = 1j * (omega[None, :] / c) * un[:, None] * P
        G[:, 0] = 0.0
    return NodeSignals(grid, sample_rate, P, G, int(predelay_samples), "frequency", n_fft, c)


def plane_wave_ir(spec: PlaneWaveSpec, grid: SamplingGrid, sample_rate: float, length: int,
                  predelay_samples: int | None = None, c: float = SPEED_OF_SOUND) -> NodeSignals:
    """Band-limited node impulse responses of a plane wave.

    Node ``x`` peaks at ``predelay - (u.x)/c`` seconds. The Nyquist bin is
    dropped so every channel has the same energy regardless of its
    fractional delay.
    """
    if predelay_samples is None:
        predelay_samples = default_predelay(grid, sample_rate, c)
    if length < 2 * predelay_samples or length < 2:
        raise FieldError(f"length {length} too short for predelay {predelay_samples} (time aliasing)")
    spec_bins = plane_wave_bins(spec, grid, sample_rate, length // 2 + 1, predelay_samples, c, n_fft=length)
    P = spec_bins.pressure
    G = spec_bins.gradient
    if length % 2 == 0:
        P[:, -1] = 0.0
        if G is not None:
            G[:, -1] = 0.0
    return spec_bins.to_time()


def cardioid_combine(p, dpdn, omega, c: float = SPEED_OF_SOUND):
    """``p + dpdn * c / (i omega)``; pressure alone where ``omega == 0``."""
    omega = np.asarray(omega, dtype=np.float64)
    p = np.asarray(p)
    dpdn = np.asarray(dpdn)
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = np.where(omega != 0, c / (1j * np.where(omega != 0, omega, 1.0)), 0.0)
    return p + gamma * dpdn


def velocity_to_gradient(v_n, omega, rho0: float = AIR_DENSITY):
    """Normal pressure gradient from normal particle velocity (Euler equation)."""
    return -1j * np.asarray(omega) * rho0 * np.asarray(v_n)


def gradient_from_double_layer(p_outer, p_inner, spacing_m: float, f_max: float | None = None,
                               c: float = SPEED_OF_SOUND):
    """Normal gradient from pressure on two parallel layers ``spacing_m`` apart.

    The estimate belongs to the mid-surface between the layers.
    """
    if spacing_m <= 0:
        raise FieldError("layer spacing must be positive")
    if f_max is not None and f_max > 0 and spacing_m >= (c / f_max) / 10:
        warnings.warn(
            f"layer spacing {spacing_m:g} m exceeds a tenth of the wavelength at {f_max:g} Hz",
            SpacingWarning, stacklevel=2)
    return (np.asarray(p_outer) - np.asarray(p_inner)) / spacing_m


# --------------------------------------------------------------- container

def write_node_signals(path, signals: NodeSignals, grid_path=None) -> None:
    """Raw little-endian float64, frame-interleaved, plus ``<path>.json`` sidecar."""
    path = Path(path)
    sig = signals.to_time()
    data = sig.stacked().T.astype("<f8")
    path.write_bytes(np.ascontiguousarray(data).tobytes())
    if grid_path is None:
        grid_path = path.with_name(path.name + ".grid.json")
        write_grid(grid_path, sig.grid)
    grid_path = Path(grid_path)
    try:
        grid_ref = str(grid_path.resolve().relative_to(path.resolve().parent))
    except ValueError:
        grid_ref = str(grid_path.resolve())
    meta = {
        "format_version": NODE_FORMAT_VERSION,
        "sample_rate": sig.sample_rate,
        "channels": data.shape[1],
        "length": data.shape[0],
        "predelay_samples": int(sig.predelay_samples),
        "layout": sig.layout,
        "grid": grid_ref,
        "grid_fingerprint": sig.grid.fingerprint(),
        "speed_of_sound": sig.c,
    }
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=1) + "\n")


def read_node_signals(path, grid: SamplingGrid | None = None) -> NodeSignals:
    path = Path(path)
    side = Path(str(path) + ".json")
    try:
        meta = json.loads(side.read_text())
        raw = path.read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise FieldError(f"cannot read node signals {path}: {exc}") from exc
    if grid is None:
        gpath = Path(meta["grid"])
        if not gpath.is_absolute():
            gpath = path.parent / gpath
        grid = read_grid(gpath)
    n_ch, length = int(meta["channels"]), int(meta["length"])
    if len(raw) != 8 * n_ch * length:
        raise FieldError(f"{path}: expected {n_ch * length} samples, found {len(raw) // 8}")
    data = np.frombuffer(raw, dtype="<f8").reshape(length, n_ch).T.astype(np.float64)
    L = grid.n_nodes
    layout = meta.get("layout", "pressure")
    expected = 2 * L if layout == "pressure+gradient" else L
    if n_ch != expected:
        raise FieldError(f"{path}: layout {layout} on a {L}-node grid needs {expected} channels, found {n_ch}")
    P = data[:L]
    G = data[L:] if layout == "pressure+gradient" else None
    return NodeSignals(grid, float(meta["sample_rate"]), P, G, int(meta.get("predelay_samples", 0)),
                       "time", length, float(meta.get("speed_of_sound", SPEED_OF_SOUND)))

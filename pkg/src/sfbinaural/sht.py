"""Spherical harmonics, node mode responses and regularised decomposition.

Conventions: real spherical harmonics, ACN channel order, N3D
normalisation (orthonormal over the sphere), no Condon-Shortley phase.
Sound fields use the kernel ``exp(-i k.x)`` with time dependence
``exp(+i w t)``; the interior field expansion is
``p(x) = sum_nm a_nm j_n(k r) Y_nm(x/r)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .grids import SPEED_OF_SOUND, GridFamily, SamplingGrid, default_max_order


def n_channels(order: int) -> int:
    return (order + 1) ** 2


def acn(n: int, m: int) -> int:
    return n * n + n + m


def acn_degrees(order: int) -> np.ndarray:
    """Degree n of every ACN channel up to ``order``."""
    return np.repeat(np.arange(order + 1), 2 * np.arange(order + 1) + 1)


def real_sh(order: int, points, gradient: bool = False):
    """Real N3D spherical harmonics at unit vectors ``points`` (P, 3).

    With ``gradient=True`` also returns the Cartesian gradient of the regular
    solid harmonic ``R_nm(x) = |x|**n Y_nm(x/|x|)`` at the same points,
    shape (P, C, 3). Both come from the same homogeneous-polynomial
    recurrences, so the gradient is exact rather than differenced.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    r2 = x * x + y * y + z * z
    P = pts.shape[0]
    C = n_channels(order)
    Y = np.zeros((P, C))
    dY = np.zeros((P, C, 3)) if gradient else None

    # (x + i y)^m split into A_m + i B_m, with derivatives
    A = [np.ones(P)]
    B = [np.zeros(P)]
    dA = [np.zeros((P, 3))]
    dB = [np.zeros((P, 3))]
    for m in range(1, order + 1):
        a, b = A[-1], B[-1]
        A.append(x * a - y * b)
        B.append(x * b + y * a)
        if gradient:
            da, db = dA[-1], dB[-1]
            nda = x[:, None] * da - y[:, None] * db
            ndb = x[:, None] * db + y[:, None] * da
            nda[:, 0] += a
            nda[:, 1] -= b
            ndb[:, 0] += b
            ndb[:, 1] += a
            dA.append(nda)
            dB.append(ndb)

    inv4pi = 1.0 / (4 * math.pi)
    pmm = 1.0  # normalised sectoral seed sqrt(1/(2m)!) * (2m-1)!!
    for m in range(order + 1):
        if m > 0:
            pmm *= math.sqrt((2 * m - 1) / (2 * m))
        # normalised homogeneous Legendre part Pbar_n^m(z, r^2), with d/dz and d/d(r^2)
        p_prev2 = None
        p_prev = np.full(P, pmm)
        dz_prev2 = dr_prev2 = None
        dz_prev = np.zeros(P)
        dr_prev = np.zeros(P)
        for n in range(m, order + 1):
            if n == m:
                p, dz, dr = p_prev, dz_prev, dr_prev
            elif n == m + 1:
                f = math.sqrt(2 * m + 1)
                p = f * z * p_prev
                dz = f * (p_prev + z * dz_prev)
                dr = f * z * dr_prev
            else:
                a1 = (2 * n - 1) / math.sqrt((n - m) * (n + m))
                a2 = math.sqrt((n + m - 1) * (n - m - 1) / ((n - m) * (n + m)))
                p = a1 * z * p_prev - a2 * r2 * p_prev2
                dz = a1 * (p_prev + z * dz_prev) - a2 * r2 * dz_prev2
                dr = a1 * z * dr_prev - a2 * (p_prev2 + r2 * dr_prev2)
            if n > m:
                p_prev2, dz_prev2, dr_prev2 = p_prev, dz_prev, dr_prev
                p_prev, dz_prev, dr_prev = p, dz, dr

            norm = math.sqrt((2 * n + 1) * inv4pi * (1 if m == 0 else 2))
            dP = None
            if gradient:
                dP = np.empty((P, 3))
                dP[:, 0] = 2 * x * dr
                dP[:, 1] = 2 * y * dr
                dP[:, 2] = dz + 2 * z * dr
            if m == 0:
                Y[:, acn(n, 0)] = norm * p
                if gradient:
                    dY[:, acn(n, 0)] = norm * dP
            else:
                Y[:, acn(n, m)] = norm * p * A[m]
                Y[:, acn(n, -m)] = norm * p * B[m]
                if gradient:
                    dY[:, acn(n, m)] = norm * (dP * A[m][:, None] + p[:, None] * dA[m])
                    dY[:, acn(n, -m)] = norm * (dP * B[m][:, None] + p[:, None] * dB[m])
    return (Y, dY) if gradient else Y


def cart_to_dirs(azimuth, elevation):
    """Unit vectors from azimuth/elevation in radians (x front, y left, z up)."""
    az = np.asarray(azimuth, dtype=np.float64)
    el = np.asarray(elevation, dtype=np.float64)
    az, el = np.broadcast_arrays(az, el)
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


def dirs_to_angles(u):
    u = np.atleast_2d(u)
    az = np.arctan2(u[:, 1], u[:, 0])
    el = np.arcsin(np.clip(u[:, 2] / np.linalg.norm(u, axis=1), -1, 1))
    return az, el


@dataclass(frozen=True)
class ShBasisMatrix:
    order: int
    directions: np.ndarray
    values: np.ndarray
    ordering: str = "ACN"
    normalization: str = "N3D"


def sh_basis(order: int, directions) -> ShBasisMatrix:
    dirs = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    return ShBasisMatrix(order, dirs, real_sh(order, dirs))


def spherical_jn(nmax: int, x, derivative: bool = False):
    """All ``j_0..j_nmax`` at ``x`` (any shape); shape ``(nmax+1,) + x.shape``.

    With ``derivative=True`` returns ``(j, dj/dx)``.
    """
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    top = nmax + 1 if derivative else nmax
    j = _kernels.spherical_jn_all(top, x.ravel())
    if not derivative:
        return j.reshape((nmax + 1,) + shape)
    xr = x.ravel()
    dj = np.empty((nmax + 1, xr.size))
    dj[0] = -j[1]
    nz = xr > 0
    n = np.arange(1, nmax + 1)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        dj[1:] = np.where(nz, j[:-2] - (n + 1) / np.where(nz, xr, 1.0) * j[1:-1], 0.0)
    if nmax >= 1:
        dj[1, ~nz] = 1.0 / 3.0
    return j[:-1].reshape((nmax + 1,) + shape), dj.reshape((nmax + 1,) + shape)


# ------------------------------------------------------------ mode responses

@dataclass(frozen=True)
class _GridGeometry:
    r: np.ndarray
    unit: np.ndarray
    Y: np.ndarray
    dR: np.ndarray | None
    radial: np.ndarray | None  # unit . normal
    tangential: np.ndarray | None  # (grad_S Y . normal), (L, C)


_GEOM_CACHE: dict = {}


def _geometry(grid: SamplingGrid, order: int) -> _GridGeometry:
    key = (id(grid), grid.fingerprint(), order)
    hit = _GEOM_CACHE.get(key)
    if hit is not None:
        return hit
    nodes = grid.nodes
    r = np.linalg.norm(nodes, axis=1)
    unit = np.where(r[:, None] > 0, nodes / np.where(r > 0, r, 1.0)[:, None], np.array([0.0, 0.0, 1.0]))
    if grid.has_gradient:
        Y, dR = real_sh(order, unit, gradient=True)
        normals = grid.normals
        radial = np.einsum("ij,ij->i", unit, normals)
        deg = acn_degrees(order)
        # surface gradient of Y at the unit sphere: grad R - n Y x_hat
        tang = np.einsum("lcj,lj->lc", dR, normals) - deg[None, :] * Y * radial[:, None]
        geom = _GridGeometry(r, unit, Y, dR, radial, tang)
    else:
        Y = real_sh(order, unit)
        geom = _GridGeometry(r, unit, Y, None, None, None)
    if len(_GEOM_CACHE) > 32:
        _GEOM_CACHE.clear()
    _GEOM_CACHE[key] = geom
    return geom


def mode_parts(grid: SamplingGrid, order: int, k: float):
    """Pressure and normal-gradient responses of every node to unit SH modes.

    Returns ``(pressure, gradient)``, each (L, C) real; gradient is ``None``
    for volumetric grids.
    """
    geom = _geometry(grid, order)
    deg = acn_degrees(order)
    kr = k * geom.r
    if grid.has_gradient:
        j, dj = spherical_jn(order, kr, derivative=True)
    else:
        j = spherical_jn(order, kr)
    jl = j.T[:, deg]  # (L, C)
    pressure = jl * geom.Y
    if not grid.has_gradient:
        return pressure, None
    djl = dj.T[:, deg]
    with np.errstate(divide="ignore", invalid="ignore"):
        j_over_r = np.where(geom.r[:, None] > 0, jl / geom.r[:, None], 0.0)
    gradient = k * djl * geom.Y * geom.radial[:, None] + j_over_r * geom.tangential
    return pressure, gradient


def mode_response(grid: SamplingGrid, order: int, k: float) -> np.ndarray:
    """Node responses G (L, C) to unit-coefficient interior fields at wavenumber k.

    Volumetric grids sample pressure; surface grids sample the cardioid
    combination ``p + dp/dn / (i k)``. At ``k = 0`` the gradient weight is 0.
    """
    if k < 0:
        raise ValueError("wavenumber must be nonnegative")
    pressure, gradient = mode_parts(grid, order, k)
    if gradient is None or k == 0:
        return pressure.astype(np.complex128)
    return pressure + gradient / (1j * k)


# ---------------------------------------------------------- regularisation

@dataclass(frozen=True)
class RegProfile:
    """Frequency-dependent singular-value dynamic range, piecewise linear in log f.

    ``points`` are ``(frequency_hz, dynamic_range_db)`` pairs; the range is
    held constant outside the first and last point.
    """

    points: tuple = ((200.0, 20.0), (2000.0, 60.0))

    def dynamic_range_db(self, freqs) -> np.ndarray:
        f = np.asarray(freqs, dtype=np.float64)
        pf = np.array([p[0] for p in self.points], dtype=np.float64)
        pd = np.array([p[1] for p in self.points], dtype=np.float64)
        lf = np.log10(np.maximum(f, 1e-6))
        return np.interp(lf, np.log10(pf), pd)

    def to_dict(self):
        return {"points": [[float(a), float(b)] for a, b in self.points]}

    @classmethod
    def from_dict(cls, doc):
        pts = tuple((float(a), float(b)) for a, b in doc["points"])
        if not pts or any(b < 0 for _, b in pts) or any(a <= 0 for a, _ in pts):
            raise ValueError("regularisation points need positive frequencies and nonnegative dB")
        if list(pts) != sorted(pts):
            raise ValueError("regularisation points must be sorted by frequency")
        return cls(pts)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


DEFAULT_REG = RegProfile()

# singular values this far below the largest are treated as exact zeros
_RANK_EPS = 1e-13


def clamp_singular_values(s: np.ndarray, dyn_range_db) -> np.ndarray:
    """Raise singular values below ``s_max * 10**(-dB/20)`` to that floor.

    ``s`` has shape (..., r) in descending order. Values that are numerically
    zero are returned as ``inf`` so their inverse vanishes.
    """
    s = np.asarray(s, dtype=np.float64)
    smax = s[..., :1]
    floor = smax * 10.0 ** (-np.asarray(dyn_range_db, dtype=np.float64)[..., None] / 20.0)
    out = np.maximum(s, floor)
    return np.where(s > _RANK_EPS * smax, out, np.inf)


def regularized_pinv(A: np.ndarray, dyn_range_db) -> np.ndarray:
    """Pseudo-inverse with clamped singular values; ``A`` may be stacked (..., M, N)."""
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    sc = clamp_singular_values(s, dyn_range_db)
    return np.einsum("...ji,...j,...kj->...ik", Vh.conj(), 1.0 / sc, U.conj())


@dataclass(frozen=True)
class DecompositionMatrix:
    grid_fingerprint: str
    order: int
    freqs: np.ndarray
    matrices: np.ndarray  # (K, C, L) complex
    floors: np.ndarray  # (K,) smallest singular value kept after clamping
    reg: RegProfile = field(default=DEFAULT_REG)
    c: float = SPEED_OF_SOUND

    def operator_norms(self) -> np.ndarray:
        return np.linalg.norm(self.matrices, ord=2, axis=(1, 2))


class DecompositionError(ValueError):
    pass


def decomposition_matrix(grid: SamplingGrid, order: int, freqs, reg: RegProfile = DEFAULT_REG,
                         c: float = SPEED_OF_SOUND, force: bool = False) -> DecompositionMatrix:
    """Per-bin regularised inverse of the node mode responses."""
    C = n_channels(order)
    if C > grid.n_nodes:
        raise DecompositionError(f"order {order} needs {C} coefficients but grid has {grid.n_nodes} nodes")
    if not force and order > max(grid.max_order, default_max_order(grid)):
        raise DecompositionError(f"order {order} exceeds grid capability {grid.max_order}")
    freqs = np.asarray(freqs, dtype=np.float64)
    dr = reg.dynamic_range_db(freqs)
    mats = np.empty((freqs.size, C, grid.n_nodes), dtype=np.complex128)
    floors = np.empty(freqs.size)
    for i, f in enumerate(freqs):
        G = mode_response(grid, order, 2 * math.pi * f / c)
        U, s, Vh = np.linalg.svd(G, full_matrices=False)
        sc = clamp_singular_values(s, dr[i])
        mats[i] = (Vh.conj().T / sc) @ U.conj().T
        floors[i] = sc[np.isfinite(sc)].min()
    return DecompositionMatrix(grid.fingerprint(), order, freqs, mats, floors, reg, c)


# ------------------------------------------------------------------ analysis

@dataclass
class ShSignal:
    """Ambisonic signal: ``(N+1)**2`` channels, ACN/N3D.

    ``data`` is (C, T) real in the time domain or (C, K) complex half-spectra
    in the frequency domain.
    """

    order: int
    data: np.ndarray
    sample_rate: float
    domain: str = "frequency"
    ordering: str = "ACN"
    normalization: str = "N3D"

    def __post_init__(self):
        if self.data.shape[0] != n_channels(self.order):
            raise ValueError(f"order {self.order} needs {n_channels(self.order)} channels, got {self.data.shape[0]}")


def cardioid_spectra(signals) -> np.ndarray:
    """Combined node spectra (L, K): pressure, or pressure + gradient/(i k) for surface grids."""
    from .fields import cardioid_combine

    spec = signals.spectra()
    P = spec.pressure
    if spec.gradient is None:
        return P
    omega = 2 * math.pi * spec.freqs
    return cardioid_combine(P, spec.gradient, omega[None, :], signals.c)


def analyze(signals, D: DecompositionMatrix) -> ShSignal:
    """Apply the decomposition per bin: ``a = D s``."""
    from .fields import FieldError

    if signals.grid.fingerprint() != D.grid_fingerprint:
        raise FieldError("node signals and decomposition refer to different grids")
    if signals.grid.has_gradient and signals.gradient is None:
        raise FieldError("surface grid signals need gradient channels")
    S = cardioid_spectra(signals)
    if S.shape[1] != D.freqs.size:
        raise FieldError(f"signal has {S.shape[1]} bins, decomposition has {D.freqs.size}")
    a = np.einsum("kcl,lk->ck", D.matrices, S)
    return ShSignal(D.order, a, signals.sample_rate, "frequency")


def plane_wave_coefficients(order: int, u) -> np.ndarray:
    """SH coefficients of a unit plane wave arriving from unit vector(s) ``u``.

    ``exp(i k u.x) = sum_nm 4 pi i**n Y_nm(u) j_n(k r) Y_nm(x/r)``; shape (C,)
    or (C, Q).
    """
    u = np.asarray(u, dtype=np.float64)
    Y = real_sh(order, np.atleast_2d(u))  # (Q, C)
    a = (4 * math.pi * (1j ** acn_degrees(order)))[:, None] * Y.T
    return a[:, 0] if u.ndim == 1 else a

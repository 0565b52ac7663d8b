"""HRTF sets: container I/O, a rigid-sphere head model, and SH fits (LS / MagLS)."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.special import spherical_jn, spherical_yn

from .grids import SPEED_OF_SOUND
from .sht import acn_degrees, cart_to_dirs, dirs_to_angles, n_channels, real_sh

HRTF_FORMAT_VERSION = 1
DEFAULT_HEAD_RADIUS = 0.0875
SWEET_SPOT_RADIUS = 0.085


class HrtfError(ValueError):
    pass


@dataclass(eq=False)
class HrtfSet:
    directions: np.ndarray  # (Q, 3) unit vectors
    left: np.ndarray  # (Q, T)
    right: np.ndarray  # (Q, T)
    sample_rate: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.directions = np.atleast_2d(np.asarray(self.directions, dtype=np.float64))
        self.left = np.atleast_2d(np.asarray(self.left))
        self.right = np.atleast_2d(np.asarray(self.right))
        Q = self.directions.shape[0]
        if Q < 4:
            raise HrtfError(f"an HRTF set needs at least 4 directions, got {Q}")
        if self.left.shape != self.right.shape or self.left.shape[0] != Q:
            raise HrtfError("left/right responses must be (Q, T) with one row per direction")
        if np.any(np.abs(np.linalg.norm(self.directions, axis=1) - 1) > 1e-9):
            raise HrtfError("directions must be unit vectors")
        d = self.directions @ self.directions.T
        np.fill_diagonal(d, -2)
        if np.any(d > 1 - 1e-12):
            raise HrtfError("HRTF directions must be pairwise distinct")

    @property
    def n_directions(self) -> int:
        return self.directions.shape[0]

    @property
    def length(self) -> int:
        return self.left.shape[1]

    def irs(self) -> np.ndarray:
        """(Q, 2, T) impulse responses, left then right."""
        return np.stack([self.left, self.right], axis=1).astype(np.float64)

    def spectra(self, n_fft: int | None = None) -> np.ndarray:
        """(K, Q, 2) half-spectra."""
        n = n_fft or self.length
        if n < self.length:
            raise HrtfError(f"n_fft {n} shorter than the HRIRs ({self.length})")
        return np.fft.rfft(self.irs(), n=n, axis=2).transpose(2, 0, 1)

    def nearest(self, u) -> np.ndarray:
        """Index of the closest direction; ties go to the lowest index."""
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        return np.argmax(u @ self.directions.T, axis=1)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.directions, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.left, dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(self.right, dtype="<f4").tobytes())
        h.update(repr(float(self.sample_rate)).encode())
        return h.hexdigest()


# ------------------------------------------------------------------ container

def save_hrtf(path, hrtf: HrtfSet) -> None:
    """Directory with ``index.json`` and one float32 stereo WAV per direction."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    az, el = dirs_to_angles(hrtf.directions)
    entries = []
    width = max(4, len(str(hrtf.n_directions)))
    for q in range(hrtf.n_directions):
        name = f"{q:0{width}d}.wav"
        stereo = np.stack([hrtf.left[q], hrtf.right[q]], axis=1).astype(np.float32)
        wavfile.write(root / name, int(round(hrtf.sample_rate)), stereo)
        entries.append({
            "azimuth_deg": float(np.degrees(az[q])),
            "elevation_deg": float(np.degrees(el[q])),
            "vector": [float(v) for v in hrtf.directions[q]],
            "file": name,
        })
    index = {
        "format_version": HRTF_FORMAT_VERSION,
        "sample_rate": float(hrtf.sample_rate),
        "length": hrtf.length,
        "metadata": hrtf.metadata,
        "entries": entries,
    }
    (root / "index.json").write_text(json.dumps(index, indent=1) + "\n")


def load_hrtf(path) -> HrtfSet:
    root = Path(path)
    try:
        index = json.loads((root / "index.json").read_text())
        entries = index["entries"]
        fs = float(index["sample_rate"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise HrtfError(f"malformed HRTF index in {root}: {exc}") from exc
    if not isinstance(entries, list) or not entries:
        raise HrtfError(f"{root}: index lists no entries")
    dirs, left, right = [], [], []
    for i, e in enumerate(entries):
        try:
            fname = e["file"]
            if "vector" in e:
                u = np.asarray(e["vector"], dtype=np.float64)
            else:
                u = cart_to_dirs(math.radians(e["azimuth_deg"]), math.radians(e["elevation_deg"]))
        except (KeyError, TypeError) as exc:
            raise HrtfError(f"{root}: malformed index entry {i}: {exc}") from exc
        fpath = root / fname
        if not fpath.is_file():
            raise HrtfError(f"{root}: entry {i} references missing file {fname!r}")
        rate, data = wavfile.read(fpath)
        if rate != int(round(fs)):
            raise HrtfError(f"{fname}: sample rate {rate} differs from index ({fs})")
        if data.ndim != 2 or data.shape[1] != 2:
            raise HrtfError(f"{fname}: expected a 2-channel file")
        dirs.append(u)
        left.append(data[:, 0])
        right.append(data[:, 1])
    lengths = {len(x) for x in left}
    if len(lengths) != 1:
        raise HrtfError(f"{root}: inconsistent HRIR lengths {sorted(lengths)}")
    return HrtfSet(np.array(dirs), np.array(left), np.array(right), fs, index.get("metadata", {}))


# -------------------------------------------------------------- sphere model

def _legendre_all(nmax, x):
    x = np.asarray(x, dtype=np.float64)
    P = np.empty((nmax + 1,) + x.shape)
    P[0] = 1.0
    if nmax >= 1:
        P[1] = x
    for n in range(1, nmax):
        P[n + 1] = ((2 * n + 1) * x * P[n] - n * P[n - 1]) / (n + 1)
    return P


def sphere_transfer(cos_angle, freqs, head_radius=DEFAULT_HEAD_RADIUS, c=SPEED_OF_SOUND, tol=1e-10):
    """Rigid-sphere surface pressure for a unit plane wave, relative to the free field at the centre.

    ``cos_angle`` is the cosine between the incidence direction and the ear
    position; returns ``(K,) + cos_angle.shape`` complex values.
    """
    cos_angle = np.asarray(cos_angle, dtype=np.float64)
    freqs = np.asarray(freqs, dtype=np.float64)
    out = np.empty(freqs.shape + cos_angle.shape, dtype=np.complex128)
    kas = 2 * math.pi * freqs * head_radius / c
    nmax = int(np.ceil(kas.max() if kas.size else 0)) + 60
    P = _legendre_all(nmax, cos_angle)
    n = np.arange(nmax + 1)
    for i, ka in enumerate(kas):
        if ka == 0:
            out[i] = 1.0
            continue
        with np.errstate(over="ignore"):
            dy = spherical_yn(n, ka, derivative=True)
        # y_n' overflows for n >> ka, where the term is negligible anyway
        ok = np.isfinite(dy)
        terms = np.zeros(n.size, dtype=np.complex128)
        dh = spherical_jn(n[ok], ka, derivative=True) - 1j * dy[ok]
        terms[ok] = -1j * (2 * n[ok] + 1) * (1j ** n[ok]) / (ka * ka * dh)
        mag = np.abs(terms)
        running = np.cumsum(mag)
        stop = nmax
        for cand in range(int(ka) + 1, nmax + 1):
            if mag[cand] < tol * running[cand]:
                stop = cand
                break
        out[i] = np.tensordot(terms[:stop + 1], P[:stop + 1], axes=1)
    return out


def sphere_hrtf(head_radius: float = DEFAULT_HEAD_RADIUS, ear_azimuths=(100.0, -100.0), directions=None,
                sample_rate: float = 48000.0, length: int = 256, onset_samples: int = 32,
                c: float = SPEED_OF_SOUND) -> HrtfSet:
    """Synthetic HRTF set of a rigid sphere with point ears in the horizontal plane.

    ``ear_azimuths`` are (left, right) in degrees. The responses are delayed by
    ``onset_samples`` so the ipsilateral peak is causal; the Nyquist bin is
    dropped.
    """
    if head_radius <= 0:
        raise HrtfError("head radius must be positive")
    if directions is None:
        directions = fibonacci_directions(2702)
    dirs = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    ears = cart_to_dirs(np.radians(np.asarray(ear_azimuths, dtype=np.float64)), 0.0)
    freqs = np.fft.rfftfreq(length, 1.0 / sample_rate)
    cosang = dirs @ ears.T  # (Q, 2)
    H = sphere_transfer(cosang, freqs, head_radius, c)  # (K, Q, 2)
    H = H * np.exp(-2j * math.pi * freqs * onset_samples / sample_rate)[:, None, None]
    if length % 2 == 0:
        H[-1] = 0.0
    irs = np.fft.irfft(H, n=length, axis=0)  # (T, Q, 2)
    meta = {"model": "rigid-sphere", "head_radius_m": head_radius,
            "ear_azimuths_deg": [float(a) for a in ear_azimuths], "onset_samples": onset_samples}
    return HrtfSet(dirs, irs[:, :, 0].T.copy(), irs[:, :, 1].T.copy(), sample_rate, meta)


def fibonacci_directions(n: int) -> np.ndarray:
    """Near-uniform spiral point set on the unit sphere (deterministic)."""
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    phi = math.pi * (1 + 5**0.5) * i
    r = np.sqrt(1 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


# ---------------------------------------------------------------- SH fitting

@dataclass
class HrtfSh:
    """SH coefficients of an HRTF set: ``H(u) = sum_nm coeffs[k, nm, ear] Y_nm(u)``."""

    order: int
    freqs: np.ndarray
    coeffs: np.ndarray  # (K, C, 2)
    fit_kind: np.ndarray  # (K,) "LS" | "MagLS"
    f_transition: float
    sample_rate: float
    n_fft: int
    fingerprint: str = ""

    def synthesize(self, directions) -> np.ndarray:
        """(K, Q, 2) responses at the given unit vectors."""
        Y = real_sh(self.order, np.atleast_2d(directions))
        return np.einsum("qc,kce->kqe", Y, self.coeffs)

    def decode_weights(self) -> np.ndarray:
        """Per-ear weights that turn field coefficients into ear signals.

        A unit plane wave from ``u`` has coefficients ``4 pi i**n Y_nm(u)``,
        so the weights are ``coeffs * (-i)**n / (4 pi)``.
        """
        deg = acn_degrees(self.order)
        return self.coeffs * ((-1j) ** deg / (4 * math.pi))[None, :, None]


def default_transition(order: int, c: float = SPEED_OF_SOUND) -> float:
    return order * c / (2 * math.pi * SWEET_SPOT_RADIUS)


def _sh_pinv(order, directions):
    Q = directions.shape[0]
    C = n_channels(order)
    if Q < C:
        raise HrtfError(f"order {order} needs at least {C} directions, set has {Q}")
    Y = real_sh(order, directions)
    s = np.linalg.svd(Y, compute_uv=False)
    if s[-1] <= 1e-8 * s[0]:
        raise HrtfError(f"SH matrix of the HRTF directions is rank deficient at order {order}")
    return Y, np.linalg.pinv(Y)


def fit_ls(hrtf: HrtfSet, order: int, n_fft: int | None = None) -> HrtfSh:
    """Plain least-squares SH fit per bin."""
    return fit_magls(hrtf, order, f_transition=math.inf, n_fft=n_fft)


def fit_magls(hrtf: HrtfSet, order: int, f_transition: float | None = None,
              n_fft: int | None = None) -> HrtfSh:
    """LS below ``f_transition``; above it, per bin in ascending order, fit the
    measured magnitude with the phase of the previous bin's re-synthesis."""
    if f_transition is None:
        f_transition = default_transition(order)
    if not f_transition > 0:
        raise HrtfError("transition frequency must be positive")
    Y, Yp = _sh_pinv(order, hrtf.directions)
    n = n_fft or hrtf.length
    H = hrtf.spectra(n)  # (K, Q, 2)
    freqs = np.fft.rfftfreq(n, 1.0 / hrtf.sample_rate)
    K = freqs.size
    coeffs = np.einsum("cq,kqe->kce", Yp, H)
    kind = np.where(freqs < f_transition, "LS", "MagLS")
    mag = np.abs(H)
    first = np.searchsorted(freqs, f_transition)
    for k in range(max(first, 1), K):
        phase = np.angle(Y @ coeffs[k - 1])
        coeffs[k] = Yp @ (mag[k] * np.exp(1j * phase))
    if first == 0 and K:
        # MagLS from DC: the DC bin is real, keep its LS fit as the phase seed
        kind[0] = "LS"
    return HrtfSh(order, freqs, coeffs, kind, float(f_transition), hrtf.sample_rate, n, hrtf.fingerprint())

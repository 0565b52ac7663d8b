"""Sampling grids: cubical volume, cubical surface and spherical surface.

Coordinates are metres, origin-centred. Cubical lattices put nodes on the
hull (``-size/2 + i * size/(m-1)``); spherical grids come from shipped
near-uniform direction tables with ``L = (N+2)**2`` nodes.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

SPEED_OF_SOUND = 343.0
AIR_DENSITY = 1.204
DEFAULT_SIZE_M = 0.14

GRID_FORMAT_VERSION = 1


class GridError(ValueError):
    """Invalid grid parameters or a grid file that fails validation."""


class GridFamily(str, enum.Enum):
    CUBICAL_VOLUME = "CubicalVolume"
    CUBICAL_SURFACE = "CubicalSurface"
    SPHERICAL_SURFACE = "SphericalSurface"

    @property
    def is_surface(self) -> bool:
        return self is not GridFamily.CUBICAL_VOLUME

    @property
    def short(self) -> str:
        return {"CubicalVolume": "cv", "CubicalSurface": "cs", "SphericalSurface": "ss"}[self.value]


@dataclass(frozen=True, eq=False)
class SamplingGrid:
    family: GridFamily
    nodes: np.ndarray
    size_m: float
    max_order: int
    normals: np.ndarray | None = None
    _fingerprint: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.nodes.setflags(write=False)
        if self.normals is not None:
            self.normals.setflags(write=False)

    @property
    def has_gradient(self) -> bool:
        return self.family.is_surface

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def radius(self) -> float:
        return self.size_m / 2

    def with_max_order(self, order: int) -> "SamplingGrid":
        return SamplingGrid(self.family, self.nodes.copy(), self.size_m, int(order),
                            None if self.normals is None else self.normals.copy())

    def fingerprint(self) -> str:
        """SHA-256 of the canonical grid file contents."""
        if not self._fingerprint:
            self._fingerprint.append(hashlib.sha256(grid_to_json(self).encode()).hexdigest())
        return self._fingerprint[0]

    def validate(self) -> "SamplingGrid":
        validate_grid(self)
        return self

    def __repr__(self):
        return (f"SamplingGrid({self.family.value}, L={self.n_nodes}, "
                f"size_m={self.size_m}, max_order={self.max_order})")


def validate_grid(grid: SamplingGrid) -> None:
    nodes = np.asarray(grid.nodes)
    if nodes.ndim != 2 or nodes.shape[1] != 3 or nodes.shape[0] < 1:
        raise GridError("nodes must be an (L, 3) array")
    if not np.all(np.isfinite(nodes)):
        raise GridError("nodes contain non-finite values")
    if grid.size_m <= 0:
        raise GridError("size_m must be positive")
    if grid.max_order < 0:
        raise GridError("max_order must be nonnegative")
    half = grid.size_m / 2
    tol = 1e-12
    if grid.family is GridFamily.SPHERICAL_SURFACE:
        if np.any(np.linalg.norm(nodes, axis=1) > half + tol):
            raise GridError("node outside the bounding sphere")
    elif np.any(np.abs(nodes) > half + tol):
        raise GridError("node outside the bounding cube")

    L = nodes.shape[0]
    if grid.family is GridFamily.CUBICAL_VOLUME:
        m = round(L ** (1 / 3))
        if m < 2 or m**3 != L:
            raise GridError(f"{L} is not a cube number m**3 with m >= 2")
    elif grid.family is GridFamily.CUBICAL_SURFACE:
        if _cube_surface_side(L) is None:
            raise GridError(f"{L} is not a cubical-surface count 6m^2-12m+8")
    else:
        if L != (grid.max_order + 2) ** 2:
            raise GridError(f"spherical grid with L={L} must have max_order {math.isqrt(L) - 2}")

    if grid.family.is_surface:
        normals = grid.normals
        if normals is None or np.shape(normals) != nodes.shape:
            raise GridError("surface grids need one normal per node")
        if np.any(np.abs(np.linalg.norm(normals, axis=1) - 1) > 1e-12):
            raise GridError("normals must have unit length")
        if np.any(np.einsum("ij,ij->i", nodes, normals) <= 0):
            raise GridError("normals must point away from the origin")
    elif grid.normals is not None:
        raise GridError("volumetric grids carry no normals")

    if L > 1 and _min_pairwise_distance(nodes) <= 1e-9:
        raise GridError("duplicate nodes")


def _min_pairwise_distance(nodes):
    from scipy.spatial import cKDTree

    d, _ = cKDTree(nodes).query(nodes, k=2)
    return float(d[:, 1].min())


def _cube_surface_side(L):
    # 6m^2 - 12m + 8 = L  ->  m = 1 + sqrt((L - 2) / 6)
    if L < 8:
        return None
    m = 1 + math.isqrt(max(L - 2, 0) // 6)
    for cand in (m - 1, m, m + 1):
        if cand >= 2 and 6 * cand * cand - 12 * cand + 8 == L:
            return cand
    return None


def _lattice(m, size_m):
    ax = -size_m / 2 + np.arange(m) * (size_m / (m - 1))
    ax[-1] = size_m / 2
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    idx = np.stack(np.meshgrid(np.arange(m), np.arange(m), np.arange(m), indexing="ij"), -1)
    return np.stack([X, Y, Z], -1).reshape(-1, 3), idx.reshape(-1, 3)


def make_cubical_volume(m: int, size_m: float = DEFAULT_SIZE_M, max_order: int | None = None) -> SamplingGrid:
    """Regular ``m x m x m`` lattice filling the cube of edge ``size_m``."""
    if int(m) != m or m < 2:
        raise GridError("cubical volume needs m >= 2")
    if size_m <= 0:
        raise GridError("size_m must be positive")
    nodes, _ = _lattice(int(m), float(size_m))
    grid = SamplingGrid(GridFamily.CUBICAL_VOLUME, nodes, float(size_m), 0)
    if max_order is None:
        max_order = default_max_order(grid)
    return grid.with_max_order(max_order)


def make_cubical_surface(m: int, size_m: float = DEFAULT_SIZE_M, max_order: int | None = None) -> SamplingGrid:
    """Boundary shell of the ``m**3`` lattice with outward normals.

    Face nodes get the face normal; edge and corner nodes get the normalised
    sum of the adjacent face normals.
    """
    if int(m) != m or m < 2:
        raise GridError("cubical surface needs m >= 2")
    if size_m <= 0:
        raise GridError("size_m must be positive")
    m = int(m)
    nodes, idx = _lattice(m, float(size_m))
    lo = idx == 0
    hi = idx == m - 1
    on_hull = np.any(lo | hi, axis=1)
    nodes = nodes[on_hull]
    normals = (hi[on_hull].astype(float) - lo[on_hull].astype(float))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    grid = SamplingGrid(GridFamily.CUBICAL_SURFACE, nodes, float(size_m), 0, normals)
    if max_order is None:
        max_order = default_max_order(grid)
    return grid.with_max_order(max_order)


@lru_cache(maxsize=None)
def _sphere_tables():
    with resources.files("sfbinaural").joinpath("data/sphere_grids.npz").open("rb") as fh:
        data = np.load(fh)
        return {int(k[1:]): data[k] for k in data.files}


def sphere_table_sizes() -> list[int]:
    return sorted(_sphere_tables())


def make_spherical_surface(L: int, size_m: float = DEFAULT_SIZE_M) -> SamplingGrid:
    """Near-uniform spherical grid with ``L = (N+2)**2`` nodes supporting order N."""
    if size_m <= 0:
        raise GridError("size_m must be positive")
    r = math.isqrt(int(L))
    if int(L) != L or r * r != L or r < 2:
        raise GridError(f"L={L} is not of the form (N+2)**2")
    tables = _sphere_tables()
    if L not in tables:
        raise GridError(f"no shipped direction table for L={L} (available: {sorted(tables)})")
    dirs = np.array(tables[L], dtype=np.float64)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    nodes = dirs * (size_m / 2)
    return SamplingGrid(GridFamily.SPHERICAL_SURFACE, nodes, float(size_m), r - 2, dirs.copy())


def make_grid(family: GridFamily | str, n_nodes: int, size_m: float = DEFAULT_SIZE_M) -> SamplingGrid:
    """Build a grid of the given family from its node count."""
    family = _parse_family(family)
    L = int(n_nodes)
    if family is GridFamily.CUBICAL_VOLUME:
        m = round(L ** (1 / 3)) if L > 0 else 0
        if m < 2 or m**3 != L:
            raise GridError(f"{L} nodes is not a cube m**3 (m >= 2)")
        return make_cubical_volume(m, size_m)
    if family is GridFamily.CUBICAL_SURFACE:
        m = _cube_surface_side(L)
        if m is None:
            raise GridError(f"{L} nodes is not a cubical-surface count 6m^2-12m+8")
        return make_cubical_surface(m, size_m)
    return make_spherical_surface(L, size_m)


def _parse_family(family):
    if isinstance(family, GridFamily):
        return family
    key = str(family).lower()
    for f in GridFamily:
        if key in (f.value.lower(), f.short):
            return f
    raise GridError(f"unknown grid family {family!r}")


def aliasing_frequency(N: int, R_m: float, c: float = SPEED_OF_SOUND) -> float:
    """Spatial aliasing frequency from the N = kR rule."""
    if N < 0 or R_m <= 0 or c <= 0:
        raise ValueError("need N >= 0, R_m > 0, c > 0")
    return N * c / (2 * math.pi * R_m)


# (family, node count) -> order, from the grids used in the listening test
_TABLE_ORDERS = {
    (GridFamily.CUBICAL_VOLUME, 216): 7,
    (GridFamily.CUBICAL_VOLUME, 1000): 20,
    (GridFamily.CUBICAL_VOLUME, 2197): 20,
    (GridFamily.CUBICAL_SURFACE, 98): 7,
    (GridFamily.CUBICAL_SURFACE, 488): 17,
}


def default_max_order(grid: SamplingGrid, cond_threshold: float = 1e4, c: float = SPEED_OF_SOUND) -> int:
    """Highest SH order the grid supports.

    Spherical grids: ``(N+2)**2 = L``. Cubical grids: table lookup for the
    known layouts, otherwise the orders are tried upward and the last N with
    ``(N+1)**2 <= L`` whose mode-response matrix at the aliasing frequency has
    condition number below ``cond_threshold`` is returned.
    """
    L = grid.n_nodes
    if grid.family is GridFamily.SPHERICAL_SURFACE:
        return math.isqrt(L) - 2
    known = _TABLE_ORDERS.get((grid.family, L))
    if known is not None:
        return known
    from .sht import mode_response

    N = 0
    while (N + 2) ** 2 <= L:
        f_a = aliasing_frequency(N + 1, grid.radius, c)
        G = mode_response(grid, N + 1, 2 * math.pi * f_a / c)
        # condition number from the Gram eigenvalues, cheaper than an SVD of the tall matrix
        lam = np.linalg.eigvalsh(G.conj().T @ G)
        if not (lam[0] > 0 and lam[-1] / lam[0] < cond_threshold**2):
            break
        N += 1
    return N


# ---------------------------------------------------------------- file format

def _fmt(v):
    return format(float(v), ".17g")


def grid_to_json(grid: SamplingGrid) -> str:
    rows = lambda a: "[" + ",".join("[" + ",".join(_fmt(v) for v in row) + "]" for row in a) + "]"
    parts = [
        '"format_version":' + str(GRID_FORMAT_VERSION),
        '"family":' + json.dumps(grid.family.value),
        '"size_m":' + _fmt(grid.size_m),
        '"max_order":' + str(int(grid.max_order)),
        '"nodes":' + rows(grid.nodes),
    ]
    if grid.normals is not None:
        parts.append('"normals":' + rows(grid.normals))
    return "{" + ",".join(parts) + "}\n"


def write_grid(path, grid: SamplingGrid) -> None:
    Path(path).write_text(grid_to_json(grid), encoding="utf-8")


def read_grid(path) -> SamplingGrid:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise GridError(f"cannot read grid file {path}: {exc}") from exc
    return grid_from_dict(doc)


def grid_from_dict(doc: dict) -> SamplingGrid:
    try:
        family = _parse_family(doc["family"])
        nodes = np.asarray(doc["nodes"], dtype=np.float64)
        normals = doc.get("normals")
        normals = None if normals is None else np.asarray(normals, dtype=np.float64)
        grid = SamplingGrid(family, nodes, float(doc["size_m"]), int(doc["max_order"]), normals)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, GridError):
            raise
        raise GridError(f"malformed grid description: {exc}") from exc
    return grid.validate()

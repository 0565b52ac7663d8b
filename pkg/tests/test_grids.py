import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfbinaural.grids import (GridError, GridFamily, SamplingGrid, aliasing_frequency, default_max_order,
                              grid_from_dict, grid_to_json, make_cubical_surface, make_cubical_volume, make_grid,
                              make_spherical_surface, read_grid, sphere_table_sizes, write_grid)
from sfbinaural.sht import real_sh


@pytest.mark.parametrize("m,count", [(5, 125), (3, 27), (13, 2197)])
def test_cubical_volume_counts(m, count):
    g = make_cubical_volume(m, 0.14)
    assert g.n_nodes == count
    assert not g.has_gradient and g.normals is None
    g.validate()


def test_cubical_volume_spacing():
    g = make_cubical_volume(13, 0.14)
    d = np.linalg.norm(g.nodes[:, None] - g.nodes[None], axis=2)
    np.fill_diagonal(d, np.inf)
    assert d.min() == pytest.approx(0.14 / 12, rel=1e-12)
    assert np.abs(g.nodes).max() == pytest.approx(0.07)


@pytest.mark.parametrize("m,count", [(5, 98), (10, 488)])
def test_cubical_surface_counts(m, count):
    g = make_cubical_surface(m, 0.14)
    assert g.n_nodes == count and g.has_gradient
    g.validate()


def test_surface_face_centre_normal():
    g = make_cubical_surface(5, 0.14)
    i = np.flatnonzero(np.all(np.isclose(g.nodes, [0.07, 0, 0]), axis=1))[0]
    np.testing.assert_allclose(g.normals[i], [1, 0, 0], atol=1e-15)


def test_surface_edge_and_corner_normals():
    g = make_cubical_surface(4, 0.14)
    corner = np.flatnonzero(np.all(np.isclose(g.nodes, [0.07, 0.07, 0.07]), axis=1))[0]
    np.testing.assert_allclose(g.normals[corner], np.ones(3) / math.sqrt(3), atol=1e-15)
    edge = np.flatnonzero(np.all(np.isclose(np.abs(g.nodes[:, :2]), 0.07), axis=1)
                          & (np.abs(g.nodes[:, 2]) < 0.07 - 1e-9))[0]
    assert abs(g.normals[edge, 2]) < 1e-15
    np.testing.assert_allclose(np.abs(g.normals[edge, :2]), 1 / math.sqrt(2), atol=1e-15)


@pytest.mark.parametrize("m", range(3, 11))
def test_surface_is_lattice_minus_interior(m):
    vol = {tuple(np.round(p, 12)) for p in make_cubical_volume(m, 1.0).nodes}
    h = 0.5
    inner = {p for p in vol if all(abs(c) < h - 1e-9 for c in p)}
    surf = {tuple(np.round(p, 12)) for p in make_cubical_surface(m, 1.0).nodes}
    assert len(inner) == (m - 2) ** 3
    assert surf == vol - inner


@pytest.mark.parametrize("m", range(2, 13))
def test_count_formulas(m):
    assert make_cubical_volume(m, 0.1).n_nodes == m**3
    assert make_cubical_surface(m, 0.1).n_nodes == 6 * m * m - 12 * m + 8


@pytest.mark.parametrize("N", range(0, 21))
def test_sphere_counts_and_radius(N):
    L = (N + 2) ** 2
    g = make_spherical_surface(L, 0.14)
    assert g.n_nodes == L and g.max_order == N
    np.testing.assert_allclose(np.linalg.norm(g.nodes, axis=1), 0.07, atol=1e-15)
    np.testing.assert_allclose(g.normals, g.nodes / 0.07, atol=1e-15)
    g.validate()


@pytest.mark.parametrize("L,N", [(144, 10), (25, 3), (400, 18)])
def test_sphere_orders(L, N):
    assert make_spherical_surface(L).max_order == N
    assert default_max_order(make_spherical_surface(L)) == N


def test_sphere_tables_are_designs():
    for L in sphere_table_sizes():
        g = make_spherical_surface(L, 2.0)
        N = g.max_order
        if N == 0:
            continue
        Y = real_sh(N, g.nodes)
        quad = (4 * np.pi / L) * Y[:, 1:].sum(axis=0)
        assert np.abs(quad).max() < 1e-6, L


def test_sphere_rejects_bad_counts():
    with pytest.raises(GridError, match="not of the form"):
        make_spherical_surface(26)
    with pytest.raises(GridError, match="no shipped"):
        make_spherical_surface(31 ** 2)


def test_degenerate_lattices_rejected():
    for f in (make_cubical_volume, make_cubical_surface):
        with pytest.raises(GridError):
            f(1, 0.14)
    with pytest.raises(GridError):
        make_grid("cv", 26)


@pytest.mark.parametrize("family,L,N", [("cv", 216, 7), ("cs", 98, 7), ("ss", 400, 18), ("cs", 488, 17),
                                        ("cv", 1000, 20), ("cv", 2197, 20)])
def test_table_orders(family, L, N):
    assert make_grid(family, L).max_order == N


def test_fallback_order_for_untabulated_cube():
    g = make_cubical_volume(5, 0.14)
    N = default_max_order(g)
    assert 0 <= N and (N + 1) ** 2 <= 125


def test_aliasing_frequency():
    assert aliasing_frequency(10, 0.07, 343) == pytest.approx(7800, rel=0.01)
    assert aliasing_frequency(0, 0.07) == 0
    assert aliasing_frequency(18, 0.07, 343) == pytest.approx(14036, rel=1e-3)
    with pytest.raises(ValueError):
        aliasing_frequency(3, 0.0)


@given(st.integers(0, 40), st.floats(0.01, 1.0), st.floats(300, 360))
def test_aliasing_frequency_scaling(N, R, c):
    f = aliasing_frequency(N, R, c)
    assert aliasing_frequency(2 * N, R, c) == pytest.approx(2 * f, rel=1e-14, abs=1e-12)
    assert aliasing_frequency(N, 2 * R, c) == pytest.approx(f / 2, rel=1e-14, abs=1e-12)


@pytest.mark.parametrize("family,L", [("cv", 27), ("cs", 98), ("ss", 36)])
def test_grid_file_roundtrip(tmp_path, family, L):
    g = make_grid(family, L, 0.14)
    p = tmp_path / "g.json"
    write_grid(p, g)
    h = read_grid(p)
    assert np.array_equal(h.nodes, g.nodes)
    assert h.family is g.family and h.max_order == g.max_order and h.size_m == g.size_m
    assert h.fingerprint() == g.fingerprint()
    if g.normals is not None:
        assert np.array_equal(h.normals, g.normals)


def test_reader_validates(tmp_path):
    doc = json.loads(grid_to_json(make_grid("cs", 98)))
    doc["normals"][0] = [0.0, 0.0, 0.5]
    with pytest.raises(GridError, match="unit length"):
        grid_from_dict(doc)
    doc = json.loads(grid_to_json(make_grid("cv", 27)))
    doc["nodes"][1] = doc["nodes"][0]
    with pytest.raises(GridError, match="duplicate"):
        grid_from_dict(doc)
    doc = json.loads(grid_to_json(make_grid("cv", 27)))
    doc["nodes"][0] = [1.0, 0.0, 0.0]
    with pytest.raises(GridError, match="outside"):
        grid_from_dict(doc)


def test_inward_normals_rejected():
    g = make_grid("cs", 98)
    bad = SamplingGrid(GridFamily.CUBICAL_SURFACE, g.nodes.copy(), g.size_m, g.max_order, -g.normals)
    with pytest.raises(GridError, match="away from the origin"):
        bad.validate()


def test_fingerprint_changes_with_content():
    a = make_grid("cv", 27, 0.14)
    b = make_grid("cv", 27, 0.15)
    assert a.fingerprint() != b.fingerprint()
    assert a.fingerprint() == make_grid("cv", 27, 0.14).fingerprint()

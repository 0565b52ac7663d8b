import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import sph_harm_y
from scipy.special import spherical_jn as sp_jn

from sfbinaural.fields import FieldError, NodeSignals, PlaneWaveSpec, plane_wave_bins
from sfbinaural.grids import make_grid, make_spherical_surface
from sfbinaural.sht import (DEFAULT_REG, DecompositionError, RegProfile, acn, acn_degrees, analyze,
                            clamp_singular_values, decomposition_matrix, mode_parts, mode_response, n_channels,
                            plane_wave_coefficients, real_sh, regularized_pinv, sh_basis, spherical_jn)


def _real_sh_oracle(order, u):
    """Real orthonormal SH without Condon-Shortley phase, from SciPy's complex ones."""
    polar = np.arccos(np.clip(u[:, 2], -1, 1))
    az = np.arctan2(u[:, 1], u[:, 0])
    out = np.empty((u.shape[0], n_channels(order)))
    for n in range(order + 1):
        for m in range(-n, n + 1):
            y = sph_harm_y(n, abs(m), polar, az)
            # SciPy includes (-1)^m; undo it
            y = y * (-1) ** abs(m)
            if m > 0:
                v = math.sqrt(2) * y.real
            elif m < 0:
                v = math.sqrt(2) * y.imag
            else:
                v = y.real
            out[:, acn(n, m)] = v
    return out


def test_acn_layout():
    assert [acn(0, 0), acn(1, -1), acn(1, 0), acn(1, 1), acn(2, -2)] == [0, 1, 2, 3, 4]
    assert list(acn_degrees(2)) == [0, 1, 1, 1, 2, 2, 2, 2, 2]


def test_y00_constant(rng, unit_vectors):
    u = unit_vectors(rng, 20)
    np.testing.assert_allclose(sh_basis(3, u).values[:, 0], 1 / math.sqrt(4 * math.pi), rtol=1e-15)


def test_matches_scipy(rng, unit_vectors):
    u = unit_vectors(rng, 50)
    np.testing.assert_allclose(real_sh(12, u), _real_sh_oracle(12, u), atol=1e-13)


def test_parity(rng, unit_vectors):
    u = unit_vectors(rng, 30)
    sign = (-1.0) ** acn_degrees(8)
    np.testing.assert_allclose(real_sh(8, -u), real_sh(8, u) * sign, atol=1e-13)


def test_orthonormal_on_design():
    # equal-weight design of strength 20 integrates products up to order 10 exactly
    g = make_spherical_surface(484, 2.0)
    Y = real_sh(10, g.nodes)
    gram = (4 * np.pi / g.n_nodes) * Y.T @ Y
    np.testing.assert_allclose(gram, np.eye(gram.shape[0]), atol=1e-8)


def test_gradient_matches_finite_differences(rng, unit_vectors):
    # off the unit sphere real_sh evaluates the solid harmonic |x|**n Y(x/|x|)
    x = unit_vectors(rng, 10) * 0.8
    _, dR = real_sh(6, x, gradient=True)
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (real_sh(6, x + e) - real_sh(6, x - e)) / (2 * h)
        np.testing.assert_allclose(dR[:, :, j], fd, atol=1e-8)


def test_solid_harmonic_scaling(rng, unit_vectors):
    u = unit_vectors(rng, 10)
    np.testing.assert_allclose(real_sh(5, 0.5 * u), real_sh(5, u) * 0.5 ** acn_degrees(5), atol=1e-15)


def test_spherical_jn_and_derivative():
    x = np.linspace(0, 60, 301)
    j, dj = spherical_jn(30, x, derivative=True)
    for n in (0, 1, 5, 17, 30):
        np.testing.assert_allclose(j[n], sp_jn(n, x), atol=1e-14, rtol=1e-10)
        np.testing.assert_allclose(dj[n], sp_jn(n, x, derivative=True), atol=1e-14, rtol=1e-9)


def test_spherical_jn_small_argument_series():
    x = np.array([1e-6, 1e-3, 1e-2])
    j = spherical_jn(5, x)
    for n in range(6):
        series = x**n / np.prod(np.arange(1, 2 * n + 2, 2)) * (1 - x**2 / (2 * (2 * n + 3)))
        np.testing.assert_allclose(j[n], series, rtol=1e-9)


# ------------------------------------------------------------ mode responses

def test_mode_response_dc_limit():
    g = make_spherical_surface(36, 0.14)
    p, _ = mode_parts(g, 4, 1e-9)
    np.testing.assert_allclose(p[:, 0], 1 / math.sqrt(4 * math.pi), rtol=1e-9)
    assert np.abs(p[:, 1:]).max() < 1e-9
    G0 = mode_response(g, 4, 0.0)
    np.testing.assert_allclose(G0[:, 0], 1 / math.sqrt(4 * math.pi), rtol=1e-15)
    assert np.all(G0[:, 1:] == 0)


def test_spherical_closed_form():
    g = make_spherical_surface(64, 0.14)
    R = 0.07
    k = 25.0
    G = mode_response(g, 6, k)
    j, dj = spherical_jn(6, np.array(k * R), derivative=True)
    deg = acn_degrees(6)
    expected = (j[deg] - 1j * dj[deg])[None, :] * real_sh(6, g.nodes / R)
    np.testing.assert_allclose(G, expected, atol=1e-13)


def test_burton_miller_combination_nonzero_dense_scan():
    x = np.linspace(1e-3, 40, 40000)
    j, dj = spherical_jn(20, x, derivative=True)
    mag = np.hypot(j, dj)
    # no simultaneous zero of j_n and j_n' anywhere on the scan
    assert mag.min() > 0
    for n in range(21):
        above = x > n + 1
        assert mag[n][above].min() > 0.01


def test_cardioid_entry_matches_finite_difference():
    g = make_grid("cs", 98, 0.14)
    i = np.flatnonzero(np.all(np.isclose(g.nodes, [0.07, 0, 0]), axis=1))[0]
    k = 2 / 0.07
    p, grad = mode_parts(g, 5, k)
    h = 1e-5
    n = g.normals[i]

    def pressure(x):
        r = np.linalg.norm(x)
        jn = spherical_jn(5, np.array(k * r))
        return jn[acn_degrees(5)] * real_sh(5, x[None] / r)[0]

    fd = (pressure(g.nodes[i] + h * n) - pressure(g.nodes[i] - h * n)) / (2 * h)
    np.testing.assert_allclose(grad[i], fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())
    G = mode_response(g, 5, k)
    np.testing.assert_allclose(G[i], p[i] + fd / (1j * k), rtol=1e-6, atol=1e-6)


def test_gradient_property_scan(rng):
    """100 random (node, mode, k) triples with k * size <= 30."""
    grids = [make_grid("cs", 98, 0.14), make_grid("cs", 152, 0.14), make_spherical_surface(64, 0.14)]
    h = 1e-6
    for _ in range(100):
        g = grids[rng.integers(len(grids))]
        i = rng.integers(g.n_nodes)
        N = 6
        c = rng.integers(n_channels(N))
        k = rng.uniform(0.5, 30 / g.size_m)
        _, grad = mode_parts(g, N, k)
        x, n = g.nodes[i], g.normals[i]

        def f(y):
            r = np.linalg.norm(y)
            return spherical_jn(N, np.array(k * r))[acn_degrees(N)[c]] * real_sh(N, y[None] / r)[0, c]

        fd = (f(x + h * n) - f(x - h * n)) / (2 * h)
        scale = max(abs(fd), k * 1e-3)
        assert abs(grad[i, c] - fd) <= 1e-6 * scale


# ------------------------------------------------------------ regularisation

def test_clamp_identity():
    s = np.ones(5)
    np.testing.assert_array_equal(clamp_singular_values(s, 30.0), s)
    A = np.eye(4)
    np.testing.assert_allclose(regularized_pinv(A, 10.0), A)


def test_clamp_arithmetic():
    s = np.array([1.0, 1e-6])
    out = clamp_singular_values(s, 40.0)
    np.testing.assert_allclose(1 / out, [1.0, 100.0])


def test_clamp_zero_singular_value_is_dropped():
    out = clamp_singular_values(np.array([1.0, 0.0]), 40.0)
    assert np.isinf(out[1])


def test_reg_profile():
    p = RegProfile()
    np.testing.assert_allclose(p.dynamic_range_db([50, 200, 2000, 20000]), [20, 20, 60, 60])
    assert p.dynamic_range_db([math.sqrt(200 * 2000)])[0] == pytest.approx(40.0)
    assert RegProfile.from_dict(p.to_dict()) == p
    with pytest.raises(ValueError):
        RegProfile.from_dict({"points": [[2000, 60], [200, 20]]})


def test_decomposition_identity_at_2khz():
    # order 10 at kR = 2.56 spans about 105 dB, so the profile must be wide enough to stay inactive
    g = make_spherical_surface(144, 0.14)
    D = decomposition_matrix(g, 10, [2000.0], RegProfile(((100.0, 200.0),)))
    G = mode_response(g, 10, 2 * math.pi * 2000 / 343)
    np.testing.assert_allclose(D.matrices[0] @ G, np.eye(121), atol=1e-6)


def test_decomposition_guards():
    g = make_spherical_surface(25, 0.14)
    with pytest.raises(DecompositionError):
        decomposition_matrix(g, 5, [1000.0], force=True)  # 36 > 25
    with pytest.raises(DecompositionError):
        decomposition_matrix(make_spherical_surface(36, 0.14), 5, [1000.0])
    D = decomposition_matrix(make_spherical_surface(36, 0.14), 4, [1000.0])
    assert D.matrices.shape == (1, 25, 36)


def test_operator_norm_bound_and_finiteness():
    g = make_grid("cs", 98, 0.14)
    freqs = np.linspace(0, 20000, 21)
    D = decomposition_matrix(g, 7, freqs)
    assert np.all(np.isfinite(D.matrices))
    assert np.all(D.operator_norms() <= (1 / D.floors) * (1 + 1e-10))


def test_more_dynamic_range_never_shrinks_norm():
    g = make_spherical_surface(64, 0.14)
    freqs = [100.0, 500.0, 3000.0]
    norms = [decomposition_matrix(g, 6, freqs, RegProfile(((100.0, db),))).operator_norms()
             for db in (10, 20, 40, 80)]
    for a, b in zip(norms, norms[1:]):
        assert np.all(b >= a * (1 - 1e-12))


# ------------------------------------------------------------------ analyze

def _synth_signals(grid, order, freqs, coeffs, fs=48000.0, n_fft=None):
    """Node spectra for given per-bin coefficients (C, K) through the mode parts."""
    K = len(freqs)
    P = np.zeros((grid.n_nodes, K), complex)
    Gr = np.zeros((grid.n_nodes, K), complex) if grid.has_gradient else None
    for k, f in enumerate(freqs):
        p, gr = mode_parts(grid, order, 2 * math.pi * f / 343.0)
        P[:, k] = p @ coeffs[:, k]
        if Gr is not None:
            Gr[:, k] = gr @ coeffs[:, k]
    return NodeSignals(grid, fs, P, Gr, 0, "frequency", n_fft or 2 * (K - 1))


def test_zero_in_zero_out():
    g = make_spherical_surface(36, 0.14)
    freqs = np.fft.rfftfreq(32, 1 / 48000)
    D = decomposition_matrix(g, 4, freqs)
    sig = NodeSignals(g, 48000.0, np.zeros((36, 17), complex), np.zeros((36, 17), complex), 0, "frequency", 32)
    assert np.all(analyze(sig, D).data == 0)


def test_missing_gradient_rejected():
    g = make_spherical_surface(36, 0.14)
    freqs = np.fft.rfftfreq(32, 1 / 48000)
    D = decomposition_matrix(g, 4, freqs)
    sig = NodeSignals(g, 48000.0, np.zeros((36, 17), complex), None, 0, "frequency", 32)
    with pytest.raises(FieldError):
        analyze(sig, D)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_where_unclamped(seed):
    rng = np.random.default_rng(seed)
    g = make_spherical_surface(64, 0.14)
    N = 6
    n_fft = 64
    freqs = np.fft.rfftfreq(n_fft, 1 / 48000)
    D = decomposition_matrix(g, N, freqs)
    coeffs = rng.normal(size=(49, freqs.size)) + 1j * rng.normal(size=(49, freqs.size))
    sig = _synth_signals(g, N, freqs, coeffs, n_fft=n_fft)
    a = analyze(sig, D).data
    for k, f in enumerate(freqs):
        if f == 0:
            continue
        s = np.linalg.svd(mode_response(g, N, 2 * math.pi * f / 343.0), compute_uv=False)
        if s[-1] > s[0] * 10 ** (-DEFAULT_REG.dynamic_range_db([f])[0] / 20):
            err = np.linalg.norm(a[:, k] - coeffs[:, k]) / np.linalg.norm(coeffs[:, k])
            assert err <= 1e-6


def test_plane_wave_expansion_constant():
    g = make_spherical_surface(144, 0.14)
    n_fft = 96
    fs = 48000.0
    freqs = np.fft.rfftfreq(n_fft, 1 / fs)
    k = 2  # 1 kHz
    assert freqs[k] == 1000.0
    D = decomposition_matrix(g, 10, freqs)
    u = np.array([0.3, -0.6, 0.5])
    u /= np.linalg.norm(u)
    sig = plane_wave_bins(u, g, fs, freqs.size, predelay_samples=0, n_fft=n_fft)
    a = analyze(sig, D).data[:, k]
    ref = plane_wave_coefficients(10, u)
    low = acn_degrees(10) <= 4
    rel = np.abs(a[low] - ref[low]) / np.abs(ref[low]).max()
    assert rel.max() < 0.01

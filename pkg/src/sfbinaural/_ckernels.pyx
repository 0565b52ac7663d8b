# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, fabs, ceil, pow

cnp.import_array()

cdef double _RESCALE = 1e100
cdef double _SERIES_X = 1e-6  # below this the two-term power series is exact to rounding


cdef inline int _miller_start(int nmax, double x):
    cdef double m = nmax if nmax > x else ceil(x)
    return <int>m + 32 + <int>sqrt(m)


def spherical_jn_all(int nmax, x):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t nx = xv.shape[0]
    out_arr = np.zeros((nmax + 1, nx))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i
    cdef int n, start
    cdef double xi, jm, jc, jp, j0, j1, norm, scale, ref, got, t
    cdef double[::1] buf = np.zeros(nmax + 1)
    for i in range(nx):
        xi = xv[i]
        if xi < 0:
            raise ValueError("spherical_jn_all expects x >= 0")
        if xi == 0.0:
            out[0, i] = 1.0
            continue
        if xi < _SERIES_X:
            t = 1.0
            for n in range(nmax + 1):
                if n:
                    t = t * xi / (2 * n + 1)
                out[n, i] = t * (1 - xi * xi / (2 * (2 * n + 3)))
            continue
        j0 = sin(xi) / xi
        j1 = sin(xi) / (xi * xi) - cos(xi) / xi
        if xi > nmax:
            out[0, i] = j0
            if nmax >= 1:
                out[1, i] = j1
                jm = j0
                jc = j1
                for n in range(1, nmax):
                    jp = (2 * n + 1) / xi * jc - jm
                    out[n + 1, i] = jp
                    jm = jc
                    jc = jp
            continue
        start = _miller_start(nmax, xi)
        jp = 0.0
        jc = 1.0
        norm = 0.0
        for n in range(nmax + 1):
            buf[n] = 0.0
        for n in range(start, 0, -1):
            jm = (2 * n + 1) / xi * jc - jp
            if n <= nmax:
                buf[n] = jc
            norm += (2 * n + 1) * jc * jc
            jp = jc
            jc = jm
            if fabs(jc) > _RESCALE:
                jc /= _RESCALE
                jp /= _RESCALE
                norm /= _RESCALE * _RESCALE
                for k in range(n, nmax + 1):
                    buf[k] /= _RESCALE
        buf[0] = jc
        norm += jc * jc
        scale = 1.0 / sqrt(norm)
        if nmax == 0 or fabs(j0) >= fabs(j1):
            ref = j0
            got = buf[0]
        else:
            ref = j1
            got = buf[1]
        if (ref < 0) != (got < 0):
            scale = -scale
        for n in range(nmax + 1):
            out[n, i] = buf[n] * scale
    return out_arr


def sdm_overlap_add(h, idx, irs):
    cdef double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef long long[::1] iv = np.ascontiguousarray(idx, dtype=np.int64)
    cdef double[:, :, ::1] rv = np.ascontiguousarray(irs, dtype=np.float64)
    cdef Py_ssize_t n_t = hv.shape[0]
    cdef Py_ssize_t n_ch = rv.shape[1]
    cdef Py_ssize_t m = rv.shape[2]
    out_arr = np.zeros((n_ch, n_t + m - 1))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, c, j
    cdef long long q
    cdef double a
    for t in range(n_t):
        a = hv[t]
        if a == 0.0:
            continue
        q = iv[t]
        for c in range(n_ch):
            for j in range(m):
                out[c, t + j] += a * rv[q, c, j]
    return out_arr


def image_sources(room, source, receiver, beta, int max_order, double max_dist):
    cdef double[::1] rm = np.ascontiguousarray(room, dtype=np.float64)
    cdef double[::1] sr = np.ascontiguousarray(source, dtype=np.float64)
    cdef double[::1] rc = np.ascontiguousarray(receiver, dtype=np.float64)
    cdef double[::1] bt = np.ascontiguousarray(beta, dtype=np.float64)
    cdef int span[3]
    cdef int a
    for a in range(3):
        span[a] = <int>ceil(max_dist / (2 * rm[a])) + 1
        if span[a] > max_order // 2 + 1:
            span[a] = max_order // 2 + 1
    cdef Py_ssize_t cap = 8 * (2 * span[0] + 1) * (2 * span[1] + 1) * (2 * span[2] + 1)
    dist_arr = np.empty(cap)
    amp_arr = np.empty(cap)
    vec_arr = np.empty((cap, 3))
    cdef double[::1] dist = dist_arr
    cdef double[::1] amp = amp_arr
    cdef double[:, ::1] vec = vec_arr
    cdef Py_ssize_t count = 0
    cdef int qx, qy, qz, nx, ny, nz, order
    cdef int q[3]
    cdef int nn[3]
    cdef int r0[3]
    cdef int r1[3]
    cdef double p[3]
    cdef double d, refl
    for qx in range(2):
        for qy in range(2):
            for qz in range(2):
                q[0] = qx
                q[1] = qy
                q[2] = qz
                for nx in range(-span[0], span[0] + 1):
                    for ny in range(-span[1], span[1] + 1):
                        for nz in range(-span[2], span[2] + 1):
                            nn[0] = nx
                            nn[1] = ny
                            nn[2] = nz
                            order = 0
                            for a in range(3):
                                r0[a] = nn[a] - q[a] if nn[a] >= q[a] else q[a] - nn[a]
                                r1[a] = nn[a] if nn[a] >= 0 else -nn[a]
                                order += r0[a] + r1[a]
                            if order > max_order:
                                continue
                            d = 0.0
                            for a in range(3):
                                p[a] = (1 - 2 * q[a]) * sr[a] + 2 * nn[a] * rm[a] - rc[a]
                                d += p[a] * p[a]
                            d = sqrt(d)
                            if d > max_dist:
                                continue
                            refl = 1.0
                            for a in range(3):
                                refl *= pow(bt[2 * a], r0[a]) * pow(bt[2 * a + 1], r1[a])
                            dist[count] = d
                            amp[count] = refl / (d if d > 1e-12 else 1e-12)
                            vec[count, 0] = p[0]
                            vec[count, 1] = p[1]
                            vec[count, 2] = p[2]
                            count += 1
    return dist_arr[:count].copy(), amp_arr[:count].copy(), vec_arr[:count].copy()

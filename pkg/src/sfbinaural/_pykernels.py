"""NumPy implementations of the hot kernels.

These are the reference versions. ``_ckernels.pyx`` mirrors every function
here with identical signatures and results (up to rounding).
"""
import numpy as np

_RESCALE = 1e100
_SERIES_X = 1e-6  # below this the two-term power series is exact to rounding


def _miller_start(nmax, xmax):
    return int(max(nmax, np.ceil(xmax))) + 32 + int(np.sqrt(max(nmax, xmax)))


def spherical_jn_all(nmax, x):
    """Spherical Bessel functions ``j_0 .. j_nmax`` at nonnegative ``x``.

    Upward recurrence where ``x > nmax``; Miller's downward recurrence,
    normalised with ``sum (2n+1) j_n^2 = 1``, elsewhere.

    Returns an array of shape ``(nmax + 1, x.size)``.
    """
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    out = np.zeros((nmax + 1, x.size))
    if x.size == 0:
        return out
    if np.any(x < 0):
        raise ValueError("spherical_jn_all expects x >= 0")

    zero = x == 0.0
    out[0, zero] = 1.0

    tiny = (x > 0) & (x < _SERIES_X)
    if np.any(tiny):
        # j_n(x) = x^n / (2n+1)!! * (1 - x^2 / (2 (2n+3)) + ...)
        xt = x[tiny]
        t = np.ones_like(xt)
        for n in range(nmax + 1):
            if n:
                t = t * xt / (2 * n + 1)
            out[n, tiny] = t * (1 - xt * xt / (2 * (2 * n + 3)))
    zero = zero | tiny

    up = x > nmax
    if np.any(up):
        xu = x[up]
        j0 = np.sin(xu) / xu
        out[0, up] = j0
        if nmax >= 1:
            j1 = np.sin(xu) / xu**2 - np.cos(xu) / xu
            out[1, up] = j1
            jm, jc = j0, j1
            for n in range(1, nmax):
                jn = (2 * n + 1) / xu * jc - jm
                out[n + 1, up] = jn
                jm, jc = jc, jn

    down = ~(up | zero)
    if np.any(down):
        xd = x[down]
        start = _miller_start(nmax, xd.max())
        vals = np.zeros((nmax + 1, xd.size))
        jp = np.zeros_like(xd)
        jc = np.ones_like(xd)
        norm = np.zeros_like(xd)
        for n in range(start, 0, -1):
            jm = (2 * n + 1) / xd * jc - jp
            if n <= nmax:
                vals[n] = jc
            norm += (2 * n + 1) * jc * jc
            jp, jc = jc, jm
            big = np.abs(jc) > _RESCALE
            if np.any(big):
                s = np.where(big, 1.0 / _RESCALE, 1.0)
                jc *= s
                jp *= s
                vals *= s
                norm *= s * s
        vals[0] = jc
        norm += jc * jc
        scale = 1.0 / np.sqrt(norm)
        # sign: match whichever of j0, j1 is better determined
        j0 = np.sin(xd) / xd
        j1 = np.sin(xd) / xd**2 - np.cos(xd) / xd
        use0 = np.abs(j0) >= np.abs(j1)
        ref = np.where(use0, j0, j1)
        got = np.where(use0, vals[0], vals[1] if nmax >= 1 else vals[0])
        if nmax == 0:
            ref = j0
            got = vals[0]
        scale = scale * np.sign(ref) * np.sign(got)
        out[:, down] = vals * scale
    return out


def sdm_overlap_add(h, idx, irs):
    """Sum ``h[t] * irs[idx[t]]`` placed at offset ``t``.

    ``irs`` has shape ``(Q, C, M)``; the result has shape ``(C, T + M - 1)``.
    Samples with ``h[t] == 0`` are skipped.
    """
    h = np.asarray(h, dtype=np.float64)
    idx = np.asarray(idx, dtype=np.int64)
    irs = np.asarray(irs, dtype=np.float64)
    _, n_ch, m = irs.shape
    out = np.zeros((n_ch, h.size + m - 1))
    for t in np.flatnonzero(h):
        out[:, t:t + m] += h[t] * irs[idx[t]]
    return out


def image_sources(room, source, receiver, beta, max_order, max_dist):
    """Enumerate shoebox image sources.

    Parameters
    ----------
    room : (3,) room dimensions in metres.
    source, receiver : (3,) positions inside the room.
    beta : (6,) pressure reflection factors of walls (x0, x1, y0, y1, z0, z1).
    max_order : total number of reflections allowed.
    max_dist : images further than this from the receiver are dropped.

    Returns
    -------
    dist : (I,) distances, amp : (I,) amplitudes ``prod(beta) / dist``,
    vec : (I, 3) vectors from the receiver to each image.
    """
    room = np.asarray(room, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    receiver = np.asarray(receiver, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    span = [int(np.ceil(max_dist / (2 * room[a]))) + 1 for a in range(3)]
    span = [min(s, max_order // 2 + 1) for s in span]

    dists, amps, vecs = [], [], []
    for qx in (0, 1):
        for qy in (0, 1):
            for qz in (0, 1):
                q = np.array([qx, qy, qz])
                grids = [np.arange(-span[a], span[a] + 1) for a in range(3)]
                nx, ny, nz = np.meshgrid(*grids, indexing="ij")
                lat = np.stack([nx.ravel(), ny.ravel(), nz.ravel()], axis=1)
                # reflections against the "0" and "1" wall of each axis
                r0 = np.abs(lat - q)
                r1 = np.abs(lat)
                order = (r0 + r1).sum(axis=1)
                keep = order <= max_order
                lat, r0, r1 = lat[keep], r0[keep], r1[keep]
                pos = (1 - 2 * q) * source + 2 * lat * room
                vec = pos - receiver
                d = np.sqrt((vec**2).sum(axis=1))
                keep = d <= max_dist
                lat, r0, r1, vec, d = lat[keep], r0[keep], r1[keep], vec[keep], d[keep]
                refl = np.ones(d.size)
                for a in range(3):
                    refl *= beta[2 * a] ** r0[:, a] * beta[2 * a + 1] ** r1[:, a]
                dists.append(d)
                amps.append(refl / np.maximum(d, 1e-12))
                vecs.append(vec)
    return np.concatenate(dists), np.concatenate(amps), np.concatenate(vecs)

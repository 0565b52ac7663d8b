"""Generate the shipped spherical node tables (``data/sphere_grids.npz``).

For every ``L = (N+2)**2`` with ``0 <= N <= 28``:

1. start from a Fibonacci spiral of L points;
2. spread the points by minimising the Riesz s=1 energy (L-BFGS);
3. apply Gauss-Newton minimum-norm corrections until the equal-weight
   quadrature ``sum_l Y_nm(u_l)`` vanishes for ``1 <= n <= N``
   (an equal-weight spherical design of strength N).

Run from the repository root:

    python tools/make_sphere_grids.py

The output is deterministic.
"""
import sys
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from sfbinaural.sht import real_sh  # noqa: E402

OUT = Path(__file__).resolve().parents[1] / "src" / "sfbinaural" / "data" / "sphere_grids.npz"
MAX_ORDER = 28


def fibonacci(L):
    i = np.arange(L) + 0.5
    z = 1 - 2 * i / L
    phi = np.pi * (1 + 5**0.5) * i
    r = np.sqrt(1 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def riesz(flat, L):
    x = flat.reshape(L, 3)
    nrm = np.linalg.norm(x, axis=1, keepdims=True)
    u = x / nrm
    diff = u[:, None, :] - u[None, :, :]
    d = np.linalg.norm(diff, axis=2)
    np.fill_diagonal(d, np.inf)
    e = np.sum(1.0 / d) / 2
    g_u = -np.sum(diff / d[:, :, None] ** 3, axis=1)
    # chain rule through the normalisation
    g_x = (g_u - np.sum(g_u * u, axis=1, keepdims=True) * u) / nrm
    return e, g_x.ravel()


def spread(u):
    L = u.shape[0]
    if L < 3:
        return u
    res = minimize(riesz, u.ravel(), args=(L,), jac=True, method="L-BFGS-B",
                   options={"maxiter": 400, "gtol": 1e-10})
    x = res.x.reshape(L, 3)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def tangent_frames(u):
    a = np.where(np.abs(u[:, 2:3]) < 0.9, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    t1 = np.cross(u, a)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(u, t1)
    return t1, t2


def make_design(u, order, tol=1e-14, max_iter=60):
    L = u.shape[0]
    if order == 0:
        return u
    for _ in range(max_iter):
        Y, dR = real_sh(order, u, gradient=True)
        r = Y[:, 1:].sum(axis=0)
        if np.max(np.abs(r)) < tol * L:
            break
        t1, t2 = tangent_frames(u)
        J1 = np.einsum("lcj,lj->cl", dR[:, 1:], t1)
        J2 = np.einsum("lcj,lj->cl", dR[:, 1:], t2)
        J = np.concatenate([J1, J2], axis=1)
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        u = u + step[:L, None] * t1 + step[L:, None] * t2
        u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u


def main():
    tables = {}
    for N in range(MAX_ORDER + 1):
        L = (N + 2) ** 2
        u = make_design(spread(fibonacci(L)), N)
        Y = real_sh(N, u)
        resid = np.abs(Y[:, 1:].sum(axis=0)).max(initial=0.0) * 4 * np.pi / L
        s = np.linalg.svd(Y, compute_uv=False)
        d = np.linalg.norm(u[:, None] - u[None], axis=2)
        np.fill_diagonal(d, np.inf)
        print(f"N={N:2d} L={L:4d} quad_resid={resid:.2e} cond(Y)={s[0] / s[-1]:.2f} "
              f"min_sep={np.degrees(2 * np.arcsin(d.min() / 2)):.2f} deg")
        tables[f"L{L}"] = u
    OUT.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(OUT, **tables)
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()

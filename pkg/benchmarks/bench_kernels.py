"""Compare the compiled kernels with their NumPy fallbacks.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the best wall time of each kernel per backend, the speed-up and the
largest difference between the two outputs.
"""
import argparse
import timeit

import numpy as np

from sfbinaural import _pykernels

try:
    from sfbinaural import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None


def _cases(rng):
    x = np.linspace(0.0, 60.0, 20000)
    h = rng.normal(size=48000) * (rng.random(48000) < 0.2)
    idx = rng.integers(0, 2702, size=h.size)
    irs = rng.normal(size=(2702, 2, 256))
    room = ([4.0, 5.0, 3.0], [1.1, 1.3, 1.2], [2.5, 3.0, 1.6], np.full(6, np.sqrt(0.8)), 25, 120.0)
    return {
        "spherical_jn_all(40, 20000 pts)": (lambda m: m.spherical_jn_all(40, x)),
        "sdm_overlap_add(48000 x 256)": (lambda m: m.sdm_overlap_add(h, idx, irs)),
        "image_sources(order 25)": (lambda m: m.image_sources(*room)[0]),
    }


def _diff(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        # image sources may come out in a different order
        return float("nan") if a.size != b.size else float(np.max(np.abs(np.sort(a, None) - np.sort(b, None))))
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the NumPy timings are shown")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':36s} {'numpy [s]':>10s} {'cython [s]':>11s} {'speed-up':>9s} {'max diff':>10s}")
    for name, fn in _cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat))
        if _ckernels is None:
            print(f"{name:36s} {t_py:10.4f}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat))
        d = _diff(fn(_pykernels), fn(_ckernels))
        print(f"{name:36s} {t_py:10.4f} {t_c:11.4f} {t_py / t_c:8.1f}x {d:10.2e}")


if __name__ == "__main__":
    main()

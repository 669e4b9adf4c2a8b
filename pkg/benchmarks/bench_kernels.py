#!/usr/bin/env python3
"""Compare the numba and pure-numpy implementations of the hot kernels.

Both variants are imported side by side from ``frkrem._kernels`` regardless of
``FRKREM_NO_NUMBA``; the flag only picks which one the library dispatches to.

    python benchmarks/bench_kernels.py [--n 200000] [--repeat 5]
"""

import argparse
import time

import numpy as np

from frkrem import _kernels as K
from frkrem.core import grid_centers


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation for the numba variant
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000, help="number of points")
    ap.add_argument("--tau", type=float, default=50.0)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1000, (args.n, 2))
    centers = grid_centers((0, 0, 1000, 1000), args.tau)
    r = centers.shape[0]
    w = rng.standard_normal(r)
    A = rng.standard_normal((r, r))
    C = A @ A.T / r
    labels = rng.integers(0, 1600, args.n)
    vals = rng.standard_normal(args.n)
    S = K.bisquare_matrix_numpy(pts[:20_000], centers, args.tau)

    cases = [
        ("bisquare_matrix", lambda f: f(pts[:20_000], centers, args.tau)),
        ("predict_points", lambda f: f(pts, centers, args.tau, w, C)),
        ("pairwise_distance", lambda f: f(centers, centers)),
        ("bin_sums", lambda f: f(labels, vals, 1600)),
        ("bin_rows_mean", lambda f: f(labels[:20_000], S, 1600)),
    ]
    print(f"numba available: {K.HAVE_NUMBA}; active backend: {K.BACKEND}")
    print(f"N={args.n} r={r}")
    print(f"{'kernel':<20}{'numpy (ms)':>12}{'numba (ms)':>12}{'speed-up':>10}")
    for name, call in cases:
        f_np = getattr(K, f"{name}_numpy")
        t_np = best_of(lambda: call(f_np), args.repeat)
        if K.HAVE_NUMBA:
            f_nb = getattr(K, f"{name}_numba")
            t_nb = best_of(lambda: call(f_nb), args.repeat)
            print(f"{name:<20}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}x")
        else:
            print(f"{name:<20}{1e3 * t_np:>12.2f}{'n/a':>12}")


if __name__ == "__main__":
    main()
